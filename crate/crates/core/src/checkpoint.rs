//! Small little-endian binary helpers shared by the classifier checkpoints.

use std::io::{self, Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) struct Out<'a, W: Write>(pub &'a mut W);

impl<W: Write> Out<'_, W> {
    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }

    pub fn str(&mut self, s: &str) -> io::Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())
    }

    pub fn matrix(&mut self, m: &Array2<f64>) -> io::Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        for v in m.iter() {
            self.f64(*v)?;
        }
        Ok(())
    }
}

pub(crate) struct In<R: Read>(pub R);

impl<R: Read> In<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated file".into()),
            _ => Error::ModelFormat(e.to_string()),
        })
    }

    pub fn header(&mut self, magic: &[u8; 8], version: u32) -> Result<()> {
        let mut m = [0u8; 8];
        self.fill(&mut m)?;
        if &m != magic {
            return Err(Error::ModelFormat("bad magic header".into()));
        }
        let mut v = [0u8; 4];
        self.fill(&mut v)?;
        let got = u32::from_le_bytes(v);
        if got != version {
            return Err(Error::ModelFormat(format!(
                "unsupported version {got}, expected {version}"
            )));
        }
        Ok(())
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn small(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > 1 << 32 {
            return Err(Error::ModelFormat(format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.small("string length")?;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::ModelFormat("string is not UTF-8".into()))
    }

    pub fn matrix(&mut self) -> Result<Array2<f64>> {
        let r = self.small("rows")?;
        let c = self.small("columns")?;
        let vals = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((r, c), vals).expect("shape matches length"))
    }

    pub fn finish(mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::ModelFormat("trailing bytes".into())),
            Err(e) => Err(Error::ModelFormat(e.to_string())),
        }
    }
}

pub(crate) fn write_header(w: &mut impl Write, magic: &[u8; 8], version: u32) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

/// Row-wise softmax of a two-column logit matrix.
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}

/// Argmax with ties resolved toward the lowest class index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Writes a per-epoch loss log as `epoch,loss` CSV.
pub fn loss_log_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
