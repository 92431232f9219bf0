use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::array::{read_str, read_u32, write_str, write_u32, Array2};
use crate::error::{dim_err, Error, Result};

const WEIGHTS_MAGIC: &[u8; 4] = b"DGUW";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Array2,
    grad: Array2,
    adam_m: Array2,
    adam_v: Array2,
}

impl Entry {
    fn new(value: Array2) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Array2::zeros(r, c),
            adam_m: Array2::zeros(r, c),
            adam_v: Array2::zeros(r, c),
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Named trainable weights with gradient buffers and Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter '{name}'")));
        }
        self.entries.insert(name.to_string(), Entry::new(value));
        Ok(())
    }

    /// Inserts a `rows x cols` parameter drawn from `N(0, std^2)`.
    pub fn insert_normal<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<()> {
        let data = if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            (0..rows * cols).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; rows * cols]
        };
        self.insert(name, Array2::from_vec(rows, cols, data)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn values(&self) -> impl Iterator<Item = (&str, &Array2)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn value(&self, name: &str) -> Result<&Array2> {
        self.entry(name).map(|e| &e.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Array2> {
        self.entry(name).map(|e| &e.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array2> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn set_value(&mut self, name: &str, value: Array2) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return dim_err(format!(
                "set_value '{name}': {:?} != {:?}",
                slot.shape(),
                value.shape()
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Array2) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))?;
        entry.grad.check_same_shape(g, name)?;
        for (a, b) in entry.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// One Adam update with bias correction. Gradients are cleared afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in self.entries.values_mut() {
            let n = e.value.len();
            let (value, grad, m, v) = (
                e.value.data_mut(),
                e.grad.data_mut(),
                e.adam_m.data_mut(),
                e.adam_v.data_mut(),
            );
            for i in 0..n {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                grad[i] = 0.0;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.is_finite())
    }

    /// Order-stable 64-bit fingerprint of the parameter values.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over names and value bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, e) in &self.entries {
            feed(name.as_bytes());
            for v in e.value.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Serializes values (not optimizer state) in the `DGUW` format.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        write_u32(w, self.entries.len())?;
        for (name, e) in &self.entries {
            write_str(w, name)?;
            e.value.write_binary(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::Format("bad weights magic".into()));
        }
        let version = read_u32(r)?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Format(format!(
                "unsupported weights version {version}"
            )));
        }
        let count = read_u32(r)?;
        let mut store = Self::new();
        for _ in 0..count {
            let name = read_str(r)?;
            let value = Array2::read_binary(r)?;
            store.insert(&name, value)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Copies values whose names match from `other`; names must coincide.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, file has {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (name, e) in &other.entries {
            self.set_value(name, e.value.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "w",
            Array2::from_vec(1, values.len(), values.to_vec()).unwrap(),
        )
        .unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_values_unchanged() {
        let mut s = store_with(&[1.0, -2.0]);
        s.adam_step(&AdamConfig::new(0.1));
        assert_eq!(s.value("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let cfg = AdamConfig {
            lr: 0.01,
            beta1: 0.5,
            beta2: 0.98,
            eps: 1e-8,
        };
        let g = 0.3;
        let mut s = store_with(&[1.0]);
        s.accumulate_grad("w", &Array2::scalar(g)).unwrap();
        s.adam_step(&cfg);
        // m = 0.5 g, v = 0.02 g^2; bias correction divides by 0.5 and 0.02
        let m_hat = (0.5 * g) / 0.5;
        let v_hat = (0.02 * g * g) / (1.0 - 0.98);
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_abs_diff_eq!(s.value("w").unwrap().item(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 1.0 - 0.01 * g / (g + 1e-8), epsilon = 1e-12);
        assert_eq!(s.grad("w").unwrap().item(), 0.0);
    }

    #[test]
    fn constant_gradient_update_approaches_lr_times_sign() {
        let cfg = AdamConfig::new(1e-3);
        let mut s = store_with(&[0.0, 0.0]);
        let mut last = [0.0, 0.0];
        for _ in 0..200 {
            let before = s.value("w").unwrap().data().to_vec();
            s.accumulate_grad("w", &Array2::from_vec(1, 2, vec![2.5, -0.04]).unwrap())
                .unwrap();
            s.adam_step(&cfg);
            let after = s.value("w").unwrap().data();
            last = [after[0] - before[0], after[1] - before[1]];
        }
        assert_abs_diff_eq!(last[0], -1e-3, epsilon = 1e-9);
        assert_abs_diff_eq!(last[1], 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn weights_file_layout() {
        let mut s = ParamStore::new();
        s.insert("ab", Array2::from_vec(1, 2, vec![1.5, -0.25]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"DGUW");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&(-0.25f32).to_le_bytes());
        assert_eq!(buf, expected);
        let back = ParamStore::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.value("ab").unwrap(), s.value("ab").unwrap());
        assert!(ParamStore::read_from(&mut &b"XXXX"[..]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store_with(&[1.0]);
        assert!(s.insert("w", Array2::scalar(0.0)).is_err());
    }
}
