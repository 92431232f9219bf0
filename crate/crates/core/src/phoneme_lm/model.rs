use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{input_err, Error, Result};
use crate::numerics::array::{read_u32, write_u32};
use crate::numerics::{softmax_rows, Array2, Binding, ParamStore, Tape, Var};

const LN_EPS: f64 = 1e-5;
const LM_MAGIC: &[u8; 4] = b"DGUL";
const NO_SIL: u32 = u32::MAX;

/// Encoder shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmShape {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_mult: usize,
}

impl Default for LmShape {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 2,
            blocks: 2,
            ff_mult: 2,
        }
    }
}

/// Pre-norm transformer encoder over phoneme ids plus a MASK token.
///
/// Output support is the `n_out` phoneme ids; MASK (id `n_out`) is input only.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLm {
    n_out: usize,
    sil: Option<usize>,
    shape: LmShape,
    pub params: ParamStore,
}

impl MaskedLm {
    pub fn init<R: Rng>(
        n_out: usize,
        sil: Option<usize>,
        shape: LmShape,
        rng: &mut R,
    ) -> Result<Self> {
        if n_out < 2 {
            return input_err(format!("vocabulary of {n_out} symbols"));
        }
        if shape.width == 0
            || shape.heads == 0
            || !shape.width.is_multiple_of(shape.heads)
            || !shape.width.is_multiple_of(2)
        {
            return Err(Error::Config(format!(
                "width {} must be even and divisible by {} heads",
                shape.width, shape.heads
            )));
        }
        if sil.is_some_and(|s| s >= n_out) {
            return input_err("silence id outside the vocabulary");
        }
        let d = shape.width;
        let f = d * shape.ff_mult.max(1);
        let mut p = ParamStore::new();
        p.insert_normal("emb", n_out + 1, d, 0.1, rng)?;
        let s = 1.0 / (d as f64).sqrt();
        for b in 0..shape.blocks {
            for ln in ["ln1", "ln2"] {
                p.insert(&format!("b{b}.{ln}.g"), Array2::filled(1, d, 1.0))?;
                p.insert(&format!("b{b}.{ln}.b"), Array2::zeros(1, d))?;
            }
            for m in ["q", "k", "v", "o"] {
                p.insert_normal(&format!("b{b}.w{m}"), d, d, s, rng)?;
                p.insert(&format!("b{b}.b{m}"), Array2::zeros(1, d))?;
            }
            p.insert_normal(&format!("b{b}.ff1.w"), d, f, s, rng)?;
            p.insert(&format!("b{b}.ff1.b"), Array2::zeros(1, f))?;
            p.insert_normal(&format!("b{b}.ff2.w"), f, d, 1.0 / (f as f64).sqrt(), rng)?;
            p.insert(&format!("b{b}.ff2.b"), Array2::zeros(1, d))?;
        }
        p.insert("lnf.g", Array2::filled(1, d, 1.0))?;
        p.insert("lnf.b", Array2::zeros(1, d))?;
        // a near-zero head keeps the untrained conditionals close to uniform
        p.insert_normal("head.w", d, n_out, 0.01 * s, rng)?;
        p.insert("head.b", Array2::zeros(1, n_out))?;
        Ok(Self {
            n_out,
            sil,
            shape,
            params: p,
        })
    }

    /// Number of output phoneme ids.
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn mask_id(&self) -> usize {
        self.n_out
    }

    pub fn sil(&self) -> Option<usize> {
        self.sil
    }

    pub fn shape(&self) -> LmShape {
        self.shape
    }

    fn check_ids(&self, seqs: &[Vec<usize>]) -> Result<()> {
        for s in seqs {
            if s.is_empty() {
                return input_err("empty sequence");
            }
            if let Some(&bad) = s.iter().find(|&&i| i > self.n_out) {
                return input_err(format!("unknown phoneme id {bad}"));
            }
        }
        Ok(())
    }

    /// Conditional distributions at every position of every sequence.
    pub fn predict(&self, seqs: &[Vec<usize>]) -> Result<Vec<Array2>> {
        self.check_ids(seqs)?;
        let p = &self.params;
        let d = self.shape.width;
        let total: usize = seqs.iter().map(Vec::len).sum();
        let emb = p.value("emb")?;
        let mut x = Array2::zeros(total, d);
        let mut r = 0;
        for s in seqs {
            let pe = positions(s.len(), d);
            for (l, &id) in s.iter().enumerate() {
                for ((o, e), q) in x.row_mut(r).iter_mut().zip(emb.row(id)).zip(pe.row(l)) {
                    *o = e + q;
                }
                r += 1;
            }
        }
        let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
        for b in 0..self.shape.blocks {
            let h = layer_norm(
                &x,
                p.value(&format!("b{b}.ln1.g"))?,
                p.value(&format!("b{b}.ln1.b"))?,
            );
            let lin = |h: &Array2, m: &str| -> Result<Array2> {
                affine(
                    h,
                    p.value(&format!("b{b}.w{m}"))?,
                    p.value(&format!("b{b}.b{m}"))?,
                )
            };
            let (q, k, v) = (lin(&h, "q")?, lin(&h, "k")?, lin(&h, "v")?);
            let att = self.attention_plain(&q, &k, &v, &lens)?;
            add_in_place(&mut x, &lin(&att, "o")?);
            let h = layer_norm(
                &x,
                p.value(&format!("b{b}.ln2.g"))?,
                p.value(&format!("b{b}.ln2.b"))?,
            );
            let f = affine(
                &h,
                p.value(&format!("b{b}.ff1.w"))?,
                p.value(&format!("b{b}.ff1.b"))?,
            )?
            .map(|v| v.max(0.0));
            add_in_place(
                &mut x,
                &affine(
                    &f,
                    p.value(&format!("b{b}.ff2.w"))?,
                    p.value(&format!("b{b}.ff2.b"))?,
                )?,
            );
        }
        let h = layer_norm(&x, p.value("lnf.g")?, p.value("lnf.b")?);
        let probs = softmax_rows(&affine(&h, p.value("head.w")?, p.value("head.b")?)?);
        let mut out = Vec::with_capacity(seqs.len());
        let mut off = 0;
        for &n in &lens {
            out.push(probs.slice_rows(off, n));
            off += n;
        }
        Ok(out)
    }

    fn attention_plain(
        &self,
        q: &Array2,
        k: &Array2,
        v: &Array2,
        lens: &[usize],
    ) -> Result<Array2> {
        let d = self.shape.width;
        let dh = d / self.shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros(q.rows(), d);
        let mut off = 0;
        let mut scores = Vec::new();
        for &n in lens {
            for h in 0..self.shape.heads {
                let c0 = h * dh;
                for i in 0..n {
                    let qi = &q.row(off + i)[c0..c0 + dh];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        let kj = &k.row(off + j)[c0..c0 + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let row = &mut out.row_mut(off + i)[c0..c0 + dh];
                    for (j, s) in scores.iter().enumerate() {
                        let w = s / z;
                        for (o, vv) in row.iter_mut().zip(&v.row(off + j)[c0..c0 + dh]) {
                            *o += w * vv;
                        }
                    }
                }
            }
            off += n;
        }
        Ok(out)
    }

    /// Differentiable forward pass returning the stacked `[sum(len) x n_out]`
    /// probability node.
    pub(crate) fn forward_tape(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        seqs: &[Vec<usize>],
    ) -> Result<Var> {
        self.check_ids(seqs)?;
        let d = self.shape.width;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let pe_rows: Vec<Array2> = seqs.iter().map(|s| positions(s.len(), d)).collect();
        let mut pe = Array2::zeros(ids.len(), d);
        let mut r = 0;
        for m in &pe_rows {
            for row in m.iter_rows() {
                pe.row_mut(r).copy_from_slice(row);
                r += 1;
            }
        }
        let e = tape.gather_rows(bind.get("emb")?, &ids)?;
        let pe = tape.leaf(pe);
        let mut x = tape.add(e, pe)?;
        let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
        for b in 0..self.shape.blocks {
            let g = |n: &str| bind.get(&format!("b{b}.{n}"));
            let h = layer_norm_tape(tape, x, g("ln1.g")?, g("ln1.b")?)?;
            let q = tape.linear(h, g("wq")?, g("bq")?)?;
            let k = tape.linear(h, g("wk")?, g("bk")?)?;
            let v = tape.linear(h, g("wv")?, g("bv")?)?;
            let att = self.attention_tape(tape, q, k, v, &lens)?;
            let o = tape.linear(att, g("wo")?, g("bo")?)?;
            x = tape.add(x, o)?;
            let h = layer_norm_tape(tape, x, g("ln2.g")?, g("ln2.b")?)?;
            let f = tape.linear(h, g("ff1.w")?, g("ff1.b")?)?;
            let f = tape.leaky_relu(f, 0.0);
            let f = tape.linear(f, g("ff2.w")?, g("ff2.b")?)?;
            x = tape.add(x, f)?;
        }
        let h = layer_norm_tape(tape, x, bind.get("lnf.g")?, bind.get("lnf.b")?)?;
        let logits = tape.linear(h, bind.get("head.w")?, bind.get("head.b")?)?;
        Ok(tape.softmax_rows(logits))
    }

    fn attention_tape(
        &self,
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        lens: &[usize],
    ) -> Result<Var> {
        let dh = self.shape.width / self.shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut seq_out = Vec::with_capacity(lens.len());
        let mut off = 0;
        for &n in lens {
            let (qs, ks, vs) = (
                tape.slice_rows(q, off, n)?,
                tape.slice_rows(k, off, n)?,
                tape.slice_rows(v, off, n)?,
            );
            let mut heads = Vec::with_capacity(self.shape.heads);
            for h in 0..self.shape.heads {
                let qh = tape.slice_cols(qs, h * dh, dh)?;
                let kh = tape.slice_cols(ks, h * dh, dh)?;
                let vh = tape.slice_cols(vs, h * dh, dh)?;
                let kt = tape.transpose(kh);
                let s = tape.matmul(qh, kt)?;
                let s = tape.scale(s, scale);
                let w = tape.softmax_rows(s);
                heads.push(tape.matmul(w, vh)?);
            }
            seq_out.push(tape.concat_cols(&heads)?);
            off += n;
        }
        tape.concat_rows(&seq_out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(LM_MAGIC)?;
        write_u32(w, self.n_out)?;
        w.write_all(&self.sil.map_or(NO_SIL, |s| s as u32).to_le_bytes())?;
        for v in [
            self.shape.width,
            self.shape.heads,
            self.shape.blocks,
            self.shape.ff_mult,
        ] {
            write_u32(w, v)?;
        }
        self.params.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != LM_MAGIC {
            return Err(Error::Format("bad language model magic".into()));
        }
        let n_out = read_u32(r)? as usize;
        let sil = match read_u32(r)? {
            NO_SIL => None,
            s => Some(s as usize),
        };
        let shape = LmShape {
            width: read_u32(r)? as usize,
            heads: read_u32(r)? as usize,
            blocks: read_u32(r)? as usize,
            ff_mult: read_u32(r)? as usize,
        };
        let params = ParamStore::read_from(r)?;
        Ok(Self {
            n_out,
            sil,
            shape,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
        Self::read_from(&mut BufReader::new(f))
    }
}

/// Sinusoidal position table `[len x d]`.
fn positions(len: usize, d: usize) -> Array2 {
    let mut pe = Array2::zeros(len, d);
    for l in 0..len {
        for i in 0..d / 2 {
            let angle = l as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe.set(l, 2 * i, angle.sin());
            pe.set(l, 2 * i + 1, angle.cos());
        }
    }
    pe
}

fn affine(x: &Array2, w: &Array2, b: &Array2) -> Result<Array2> {
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (o, bb) in y.row_mut(r).iter_mut().zip(b.data()) {
            *o += bb;
        }
    }
    Ok(y)
}

fn add_in_place(x: &mut Array2, y: &Array2) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

fn layer_norm(x: &Array2, g: &Array2, b: &Array2) -> Array2 {
    let d = x.cols() as f64;
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mu = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((v, gg), bb) in row.iter_mut().zip(g.data()).zip(b.data()) {
            *v = (*v - mu) * inv * gg + bb;
        }
    }
    out
}

fn layer_norm_tape(tape: &mut Tape, x: Var, g: Var, b: Var) -> Result<Var> {
    let (n, d) = tape.shape(x);
    let s = tape.sum_cols(x);
    let mu = tape.scale(s, 1.0 / d as f64);
    let mu = tape.broadcast_cols(mu, d)?;
    let xc = tape.sub(x, mu)?;
    let sq = tape.mul(xc, xc)?;
    let var = tape.sum_cols(sq);
    let var = tape.scale(var, 1.0 / d as f64);
    let var = tape.add_scalar(var, LN_EPS);
    let sd = tape.sqrt(var);
    let inv = tape.recip(sd);
    let inv = tape.broadcast_cols(inv, d)?;
    let xn = tape.mul(xc, inv)?;
    let gg = tape.broadcast_rows(g, n)?;
    let bb = tape.broadcast_rows(b, n)?;
    let y = tape.mul(xn, gg)?;
    tape.add(y, bb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::max_rel_error;
    use crate::rng::stream;

    fn small() -> MaskedLm {
        let shape = LmShape {
            width: 8,
            heads: 2,
            blocks: 2,
            ff_mult: 2,
        };
        let mut lm = MaskedLm::init(5, Some(4), shape, &mut stream(3, "lm")).unwrap();
        // a non-trivial head so the two paths are compared on real signal
        let mut rng = stream(4, "lm");
        let head =
            Array2::from_vec(8, 5, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        lm.params.set_value("head.w", head).unwrap();
        lm
    }

    #[test]
    fn plain_and_tape_paths_agree() {
        let lm = small();
        let seqs = vec![vec![0, 1, 5, 3], vec![2], vec![4, 4, 0]];
        let plain = lm.predict(&seqs).unwrap();
        let mut tape = Tape::new();
        let bind = tape.bind(&lm.params, false);
        let probs = lm.forward_tape(&mut tape, &bind, &seqs).unwrap();
        let stacked: Vec<f64> = plain.iter().flat_map(|m| m.data().to_vec()).collect();
        assert!(max_rel_error(tape.value(probs).data(), &stacked) < 1e-12);
        for m in &plain {
            assert_eq!(m.cols(), 5);
            for row in m.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_unknown_ids_and_bad_shapes() {
        let lm = small();
        assert!(lm.predict(&[vec![6]]).is_err());
        assert!(lm.predict(&[vec![]]).is_err());
        let odd = LmShape {
            width: 6,
            heads: 4,
            ..LmShape::default()
        };
        assert!(MaskedLm::init(5, None, odd, &mut stream(0, "x")).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let lm = small();
        let mut buf = Vec::new();
        lm.write_to(&mut buf).unwrap();
        let back = MaskedLm::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.n_out(), 5);
        assert_eq!(back.sil(), Some(4));
        assert_eq!(back.shape(), lm.shape());
        let a = lm.predict(&[vec![1, 2]]).unwrap();
        let b = back.predict(&[vec![1, 2]]).unwrap();
        assert!(max_rel_error(a[0].data(), b[0].data()) < 1e-5);
    }
}
