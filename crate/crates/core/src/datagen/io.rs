//! Binary containers for datasets and their ground truth.
//!
//! Dataset layout (all integers little-endian):
//! magic `DJDATASET`, u32 version, u64 seed, u32 block count, then per block
//! u32 ndim, ndim × u64 sample dims, u64 n, `p·n` f64 values (sample-major);
//! u8 label flag, then n × u32 labels if set; u64 train count and indices;
//! u64 test count and indices.
//!
//! Truth layout: magic `DJTRUTH`, u32 version, u32 entry count, then per entry
//! u32 name length, name bytes, u64 rows, u64 cols, column-major f64 values.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Modality, MultimodalDataset, SyntheticGroundTruth};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 9] = b"DJDATASET";
pub const TRUTH_MAGIC: &[u8; 7] = b"DJTRUTH";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vals: &[f64]) {
        for v in vals {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn indices(&mut self, idx: &[usize]) {
        self.u64(idx.len() as u64);
        for &i in idx {
            self.u64(i as u64);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_owned(),
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated: need {n} more bytes"))),
        }
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        // every counted item occupies at least one byte
        if v > self.bytes.len() as u64 {
            return Err(self.err(format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn indices(&mut self) -> Result<Vec<usize>> {
        let n = self.len("index count")?;
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }
    fn header(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len()).ok() != Some(magic) {
            self.pos = 0;
            return Err(self.err("bad magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

pub fn write_dataset(path: &Path, ds: &MultimodalDataset) -> Result<()> {
    ds.validate()?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(VERSION);
    w.u64(ds.seed);
    w.u32(ds.blocks.len() as u32);
    for b in &ds.blocks {
        w.u32(b.sample_shape.len() as u32);
        for &d in &b.sample_shape {
            w.u64(d as u64);
        }
        w.u64(b.n() as u64);
        w.f64s(b.data.as_slice());
    }
    match &ds.labels {
        Some(l) => {
            w.u8(1);
            for &v in l {
                w.u32(v);
            }
        }
        None => w.u8(0),
    }
    w.indices(&ds.train);
    w.indices(&ds.test);
    fs::write(path, w.0)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<MultimodalDataset> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.header(DATASET_MAGIC)?;
    let seed = r.u64()?;
    let k = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(k.min(64));
    for _ in 0..k {
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
        let n = r.len("sample count")?;
        let p: usize = shape.iter().product();
        let data = r.f64s(p.checked_mul(n).ok_or_else(|| r.err("size overflow"))?)?;
        blocks.push(Modality::new(DMatrix::from_vec(p, n, data), shape)?);
    }
    let labels = match r.u8()? {
        0 => None,
        1 => {
            let n = blocks.first().map_or(0, Modality::n);
            Some((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?)
        }
        f => return Err(r.err(format!("bad label flag {f}"))),
    };
    let train = r.indices()?;
    let test = r.indices()?;
    r.finish()?;
    MultimodalDataset::new(blocks, labels, train, test, seed)
}

fn truth_entries(t: &SyntheticGroundTruth) -> Vec<(String, &DMatrix<f64>)> {
    let mut out = vec![("alpha".to_owned(), &t.alpha)];
    for (name, mats) in [
        ("beta", &t.beta),
        ("noise", &t.noise),
        ("joint", &t.joint),
        ("individual", &t.individual),
    ] {
        for (k, m) in mats.iter().enumerate() {
            out.push((format!("{name}.{k}"), m));
        }
    }
    out.push(("templates".into(), &t.templates));
    out.push(("patterns".into(), &t.patterns));
    out
}

pub fn write_truth(path: &Path, t: &SyntheticGroundTruth) -> Result<()> {
    let entries = truth_entries(t);
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(TRUTH_MAGIC);
    w.u32(VERSION);
    w.u32(entries.len() as u32);
    for (name, m) in entries {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
        w.u64(m.nrows() as u64);
        w.u64(m.ncols() as u64);
        w.f64s(m.as_slice());
    }
    fs::write(path, w.0)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<SyntheticGroundTruth> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.header(TRUTH_MAGIC)?;
    let count = r.u32()? as usize;
    let mut t = SyntheticGroundTruth {
        alpha: DMatrix::zeros(0, 0),
        beta: Vec::new(),
        noise: Vec::new(),
        joint: Vec::new(),
        individual: Vec::new(),
        templates: DMatrix::zeros(0, 0),
        patterns: DMatrix::zeros(0, 0),
    };
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err("entry name is not UTF-8"))?
            .to_owned();
        let rows = r.len("row count")?;
        let cols = r.len("column count")?;
        let m = DMatrix::from_vec(rows, cols, r.f64s(rows.checked_mul(cols).ok_or_else(|| r.err("size overflow"))?)?);
        let (base, _) = name.split_once('.').unwrap_or((&name, ""));
        match base {
            "alpha" => t.alpha = m,
            "templates" => t.templates = m,
            "patterns" => t.patterns = m,
            "beta" => t.beta.push(m),
            "noise" => t.noise.push(m),
            "joint" => t.joint.push(m),
            "individual" => t.individual.push(m),
            _ => return Err(r.err(format!("unknown entry {name}"))),
        }
    }
    r.finish()?;
    Ok(t)
}
