//! IDX reader for the MNIST corpus, with transparent gzip support.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images as a `(rows·cols) x n` matrix in `[0,1]` plus digit labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mnist {
    pub images: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl Mnist {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// The first `n` images.
    pub fn take(&self, n: usize) -> Mnist {
        let n = n.min(self.len());
        Mnist {
            images: self.images.columns(0, n).into_owned(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Concatenates two corpora with equal image sizes.
    pub fn concat(mut self, other: Mnist) -> Result<Mnist> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape("image sizes differ".into()));
        }
        let n = self.len() + other.len();
        let mut images = DMatrix::zeros(self.pixels(), n);
        images.columns_mut(0, self.len()).copy_from(&self.images);
        images.columns_mut(self.len(), other.len()).copy_from(&other.images);
        self.images = images;
        self.labels.extend(other.labels);
        Ok(self)
    }

    /// One column per digit 0..=9: the first image of that digit.
    pub fn first_of_each_digit(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.pixels(), 10);
        for d in 0..10u8 {
            let i = self
                .labels
                .iter()
                .position(|&l| l == d)
                .ok_or_else(|| Error::Data(format!("no image of digit {d}")))?;
            out.column_mut(d as usize).copy_from(&self.images.column(i));
        }
        Ok(out)
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::Parse {
            path: path.to_owned(),
            offset: 0,
            detail: format!("gzip: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an unsigned-byte IDX payload; returns the dimensions and the raw bytes.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let err = |offset: usize, detail: String| Error::Parse {
        path: path.to_owned(),
        offset: offset as u64,
        detail,
    };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(err(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(err(3, "zero dimensions".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let at = 4 + 4 * d;
        let Some(chunk) = bytes.get(at..at + 4) else {
            return Err(err(bytes.len(), format!("truncated header, dimension {d}")));
        };
        dims.push(u32::from_be_bytes(chunk.try_into().expect("4 bytes")) as usize);
    }
    let start = 4 + 4 * ndim;
    let count: usize = dims.iter().product();
    let body = &bytes[start..];
    if body.len() < count {
        return Err(err(bytes.len(), format!("expected {count} data bytes, found {}", body.len())));
    }
    if body.len() > count {
        return Err(err(start + count, "trailing bytes after data".into()));
    }
    Ok((dims, body.to_vec()))
}

fn magic_of(bytes: &[u8]) -> u32 {
    bytes.get(..4).map_or(0, |b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

/// Reads an image file and its label file (either may be gzipped).
pub fn load_mnist(images: &Path, labels: &Path) -> Result<Mnist> {
    let ib = read_maybe_gz(images)?;
    if magic_of(&ib) != IMAGES_MAGIC {
        return Err(Error::Parse {
            path: images.to_owned(),
            offset: 0,
            detail: format!("expected image magic 0x{IMAGES_MAGIC:08x}, found 0x{:08x}", magic_of(&ib)),
        });
    }
    let (idims, pixels) = parse_idx(&ib, images)?;
    let lb = read_maybe_gz(labels)?;
    if magic_of(&lb) != LABELS_MAGIC {
        return Err(Error::Parse {
            path: labels.to_owned(),
            offset: 0,
            detail: format!("expected label magic 0x{LABELS_MAGIC:08x}, found 0x{:08x}", magic_of(&lb)),
        });
    }
    let (ldims, labels_raw) = parse_idx(&lb, labels)?;
    let (n, rows, cols) = (idims[0], idims[1], idims[2]);
    if ldims[0] != n {
        return Err(Error::Data(format!("{n} images but {} labels", ldims[0])));
    }
    if let Some(i) = labels_raw.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            path: labels.to_owned(),
            offset: (8 + i) as u64,
            detail: format!("label {} is not a digit", labels_raw[i]),
        });
    }
    let p = rows * cols;
    let images = DMatrix::from_iterator(p, n, pixels.iter().map(|&v| v as f64 / 255.0));
    Ok(Mnist {
        images,
        labels: labels_raw,
        rows,
        cols,
    })
}

/// Image/label file pairs in `dir`, training files first.
pub fn find_mnist_files(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        for tag in ["-images-idx3-ubyte", "-images.idx3-ubyte"] {
            if let Some(pos) = name.find(tag) {
                let rest = &name[pos + tag.len()..];
                if rest.is_empty() || rest == ".gz" {
                    let label_tag = tag.replace("images", "labels").replace("idx3", "idx1");
                    let stem = &name[..pos];
                    let candidates = [format!("{stem}{label_tag}{rest}"), format!("{stem}{label_tag}"), format!("{stem}{label_tag}.gz")];
                    if let Some(l) = candidates.iter().map(|c| dir.join(c)).find(|p| p.exists()) {
                        pairs.push((path.clone(), l));
                    }
                }
            }
        }
    }
    pairs.sort_by_key(|(img, _)| {
        let name = img.file_name().and_then(|n| n.to_str()).unwrap_or("").to_owned();
        (!name.starts_with("train"), name)
    });
    pairs.dedup_by(|a, b| a.0.file_stem() == b.0.file_stem() || a.0 == b.0);
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "no MNIST IDX files (*-images-idx3-ubyte[.gz] with matching labels) in {}",
            dir.display()
        )));
    }
    Ok(pairs)
}

/// Loads and concatenates every image/label pair found in `dir`
/// (the full corpus gives 60,000 training then 10,000 test images).
pub fn load_mnist_dir(dir: &Path) -> Result<Mnist> {
    let mut out: Option<Mnist> = None;
    for (img, lab) in find_mnist_files(dir)? {
        let m = load_mnist(&img, &lab)?;
        out = Some(match out {
            None => m,
            Some(acc) => acc.concat(m)?,
        });
    }
    Ok(out.expect("at least one pair"))
}
