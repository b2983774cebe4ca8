use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major (sample-major) block of `len × dim` points in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    data: Vec<f64>,
    dim: usize,
}

impl Samples {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, axis: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(axis).step_by(self.dim).copied()
    }

    /// Copy of a single coordinate as a one-dimensional sample set.
    pub fn project(&self, axis: usize) -> Result<Samples> {
        if axis >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        Samples::new(self.column(axis).collect(), 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Raw little-endian `f64` values, sample-major, no header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, dim: usize) -> Result<Samples> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::InvalidArgument(format!("reading samples: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidArgument("truncated f64 stream".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Samples::new(data, dim)
    }

    /// CSV with header `x0,…,x{d-1}`, one sample per line.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record((0..self.dim).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn binary_round_trip(values in prop::collection::vec(-1e300f64..1e300, 0..60), dim in 1usize..4) {
            let n = values.len() / dim * dim;
            let s = Samples::new(values[..n].to_vec(), dim).unwrap();
            let mut buf = Vec::new();
            s.write_binary(&mut buf).unwrap();
            prop_assert_eq!(Samples::read_binary(&buf[..], dim).unwrap(), s);
        }
    }

    #[test]
    fn csv_is_round_trip_exact() {
        let s = Samples::new(vec![0.1, -2.5e-300, 1.0 / 3.0, 7.0], 2).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x0,x1"));
        let parsed: Vec<f64> = lines.flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
        assert_eq!(parsed, s.as_slice());
        assert!(!text.contains('\r'));
    }

    #[test]
    fn column_and_projection() {
        let s = Samples::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.column(1).collect::<Vec<_>>(), vec![2.0, 5.0]);
        assert_eq!(s.project(2).unwrap().as_slice(), &[3.0, 6.0]);
        assert!(s.project(3).is_err());
        assert!(Samples::new(vec![1.0, 2.0], 3).is_err());
    }
}
