use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::Utterance;
use crate::numerics::array::{read_str, read_u32, write_str, write_u32};
use crate::numerics::Array2;

const DATASET_MAGIC: &[u8; 4] = b"DGUD";
const DATASET_VERSION: u32 = 1;
const SIL_NAME: &str = "sil";
const NAMES: [&str; 40] = [
    "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey", "f", "g", "hh",
    "ih", "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh", "t", "th", "uh",
    "uw", "v", "w", "y", "z", "zh", "ax",
];

/// Phoneme names by id; silence is the last entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    names: Vec<String>,
}

impl Inventory {
    /// `n` phonemes plus silence.
    pub fn standard(n: usize) -> Result<Self> {
        if n > NAMES.len() {
            return Err(Error::Config(format!(
                "at most {} phonemes are supported, got {n}",
                NAMES.len()
            )));
        }
        let mut names: Vec<String> = NAMES[..n].iter().map(|s| s.to_string()).collect();
        names.push(SIL_NAME.to_string());
        Ok(Self { names })
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.last().map(String::as_str) != Some(SIL_NAME) {
            return Err(Error::Format("inventory must end with 'sil'".into()));
        }
        Ok(Self { names })
    }

    /// Symbols including silence.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn sil(&self) -> usize {
        self.names.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("unknown phoneme '{name}'")))
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.name(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn parse(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|n| self.id(n)).collect()
    }
}

/// Writes one split: id, hidden phonemes as names, then the frame matrix.
pub fn write_split(path: &Path, utts: &[Utterance], inv: &Inventory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    write_u32(&mut w, utts.len())?;
    for u in utts {
        write_str(&mut w, &u.id)?;
        write_str(&mut w, &inv.render(&u.hidden_phonemes))?;
        u.frames.write_binary(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path, inv: &Inventory) -> Result<Vec<Utterance>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("{}: bad dataset magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = read_u32(&mut r)?;
    (0..n)
        .map(|_| {
            let id = read_str(&mut r)?;
            let hidden_phonemes = inv.parse(&read_str(&mut r)?)?;
            let frames = Array2::read_binary(&mut r)?;
            Ok(Utterance {
                id,
                hidden_phonemes,
                frames,
            })
        })
        .collect()
}

/// Text corpus: one sentence per line, words separated by ` | `.
pub fn write_corpus(path: &Path, sentences: &[Vec<Vec<usize>>], inv: &Inventory) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        let words: Vec<String> = s.iter().map(|w| inv.render(w)).collect();
        out.push_str(&words.join(" | "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_corpus(path: &Path, inv: &Inventory) -> Result<Vec<Vec<Vec<usize>>>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split('|').map(|w| inv.parse(w)).collect())
        .collect()
}

/// Dataset seed, config hash, inventory and every record with its split file.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub inventory: Inventory,
    /// `(split, utterance id, split file relative to the output directory)`.
    pub records: Vec<(String, String, PathBuf)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\nconfig_hash {}\n[inventory]\n", self.seed, self.config_hash);
        for n in self.inventory.names() {
            out.push_str(n);
            out.push('\n');
        }
        out.push_str("[records]\n");
        for (split, id, path) in &self.records {
            out.push_str(&format!("{split} {id} {}\n", path.display()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("manifest: {m}"));
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(key))
                .and_then(|v| v.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected '{key}'")))
        };
        let seed = field("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let config_hash = field("config_hash")?;
        if lines.next() != Some("[inventory]") {
            return Err(bad("missing [inventory]"));
        }
        let mut names = Vec::new();
        for l in lines.by_ref() {
            if l == "[records]" {
                break;
            }
            names.push(l.to_string());
        }
        let inventory = Inventory::from_names(names)?;
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut f = l.splitn(3, ' ');
                match (f.next(), f.next(), f.next()) {
                    (Some(s), Some(i), Some(p)) => Ok((s.to_string(), i.to_string(), PathBuf::from(p))),
                    _ => Err(bad(&format!("bad record line '{l}'"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seed,
            config_hash,
            inventory,
            records,
        })
    }

    pub fn count(&self, split: &str) -> usize {
        self.records.iter().filter(|(s, _, _)| s == split).count()
    }
}
