use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Empty for undefined values.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub struct Csv {
    inner: csv::Writer<File>,
}

impl Csv {
    pub fn create<S: AsRef<str>>(path: &Path, header: &[S]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
        inner.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
