//! Scalar fields on uniform rectangular grids.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Node values on a uniform grid with spacing `h`, stored row-major (last
/// axis fastest). The boundary mask marks the outermost node layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    origin: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
    boundary_mask: Vec<bool>,
}

/// Geometry part of a grid, persisted as the JSON header next to the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub origin: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
}

impl GridField {
    pub fn new(origin: Vec<f64>, h: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {h}")));
        }
        if origin.len() != shape.len() || shape.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                got: origin.len(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!("empty grid shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::InvalidArgument(format!(
                "grid of shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        let mut strides = vec![1; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        let mut grid = GridField {
            origin,
            h,
            shape,
            strides,
            values,
            boundary_mask: Vec::new(),
        };
        grid.boundary_mask = (0..len).map(|i| grid.on_boundary(i)).collect();
        if let Some(i) = (0..len).find(|&i| !grid.boundary_mask[i] && !grid.values[i].is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at interior node {i}")));
        }
        Ok(grid)
    }

    /// Grid covering the box `[lo, hi]^dim` with `nodes` nodes per axis.
    pub fn cube(lo: f64, hi: f64, dim: usize, nodes: usize) -> Result<Self> {
        if nodes < 2 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "need hi > lo and at least 2 nodes, got [{lo}, {hi}] with {nodes}"
            )));
        }
        let h = (hi - lo) / (nodes - 1) as f64;
        Self::new(vec![lo; dim], h, vec![nodes; dim], vec![0.0; nodes.pow(dim as u32)])
    }

    /// A grid with the same geometry and values `f(position)`.
    pub fn map_positions(&self, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut x = vec![0.0; self.dim()];
        let values = (0..self.len())
            .map(|i| {
                self.position_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self::new(self.origin.clone(), self.h, self.shape.clone(), values)
    }

    /// Samples a field on this grid's nodes.
    pub fn sample(&self, field: &impl ScalarField) -> Result<Self> {
        if field.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: field.dim(),
            });
        }
        self.map_positions(|x| field.value(x))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.origin.clone(), self.h, self.shape.clone(), values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            origin: self.origin.clone(),
            h: self.h,
            shape: self.shape.clone(),
        }
    }

    /// Whether two grids share origin, spacing and shape.
    pub fn same_geometry(&self, other: &GridField) -> bool {
        self.origin == other.origin && self.h == other.h && self.shape == other.shape
    }

    /// Upper corner of the grid box.
    pub fn upper(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.shape)
            .map(|(o, &n)| o + self.h * (n - 1) as f64)
            .collect()
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, s) in self.strides.iter().enumerate() {
            idx[k] = i / s;
            i %= s;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinate of node `i` along `axis`.
    pub fn coordinate(&self, i: usize, axis: usize) -> usize {
        (i / self.strides[axis]) % self.shape[axis]
    }

    pub fn position(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.position_into(i, &mut x);
        x
    }

    pub fn position_into(&self, i: usize, x: &mut [f64]) {
        for k in 0..self.dim() {
            x[k] = self.origin[k] + self.h * self.coordinate(i, k) as f64;
        }
    }

    fn on_boundary(&self, i: usize) -> bool {
        (0..self.dim()).any(|k| {
            let c = self.coordinate(i, k);
            c == 0 || c + 1 == self.shape[k]
        })
    }

    /// Number of cells between node `i` and the nearest boundary face.
    pub fn depth(&self, i: usize) -> usize {
        (0..self.dim())
            .map(|k| {
                let c = self.coordinate(i, k);
                c.min(self.shape[k] - 1 - c)
            })
            .min()
            .unwrap_or(0)
    }

    /// Multilinear interpolation; `None` outside the grid box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let n = self.dim();
        if x.len() != n {
            return None;
        }
        let mut base = 0usize;
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let t = (x[k] - self.origin[k]) / self.h;
            let last = (self.shape[k] - 1) as f64;
            if !(t >= -1e-12 && t <= last + 1e-12) {
                return None;
            }
            let t = t.clamp(0.0, last);
            let c = (t.floor() as usize).min(self.shape[k].saturating_sub(2));
            frac[k] = t - c as f64;
            base += c * self.strides[k];
        }
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..n {
                if corner >> k & 1 == 1 {
                    if self.shape[k] == 1 {
                        w = 0.0;
                        break;
                    }
                    w *= frac[k];
                    idx += self.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                total += w * self.values[idx];
            }
        }
        Some(total)
    }

    /// Writes `index,value` rows to `path` and the geometry header to
    /// [`GridField::header_path`]. Values use 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:.16e}")?;
        }
        out.flush()?;
        let header = serde_json::to_string_pretty(&self.header())?;
        fs::write(Self::header_path(path), header + "\n")?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let header: GridHeader = serde_json::from_str(&fs::read_to_string(Self::header_path(path))?)?;
        let len: usize = header.shape.iter().product();
        let mut values = vec![f64::NAN; len];
        let reader = BufReader::new(fs::File::open(path)?);
        for (lineno, line) in reader.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (i, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected index,value", lineno + 1)))?;
            let i: usize = i
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            *values
                .get_mut(i)
                .ok_or_else(|| Error::Parse(format!("line {}: index {i} out of range", lineno + 1)))? = v;
        }
        Self::new(header.origin, header.h, header.shape, values)
    }

    /// `u.csv` → `u.csv.header.json`.
    pub fn header_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".header.json");
        PathBuf::from(s)
    }
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Interpolated value, `NaN` outside the grid box.
    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_mask_is_outer_layer() {
        let g = GridField::cube(0.0, 1.0, 2, 4).unwrap();
        let interior: Vec<usize> = (0..g.len()).filter(|&i| !g.boundary_mask()[i]).collect();
        assert_eq!(interior, vec![5, 6, 9, 10]);
        assert_eq!(g.depth(5), 1);
        assert_eq!(g.depth(0), 0);
        assert_eq!(g.position(6), vec![1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn interpolation_is_exact_for_multilinear() {
        let g = GridField::cube(-1.0, 1.0, 3, 5)
            .unwrap()
            .map_positions(|x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2] + x[0] * x[1] * x[2])
            .unwrap();
        for x in [[0.1, -0.3, 0.77], [1.0, 1.0, 1.0], [-1.0, 0.2, 0.0]] {
            let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2] + x[0] * x[1] * x[2];
            // multilinear per cell, but the cubic term is only multilinear too
            assert!((g.interpolate(&x).unwrap() - exact).abs() < 1e-12);
        }
        assert!(g.interpolate(&[1.5, 0.0, 0.0]).is_none());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridField::new(vec![0.0], 0.0, vec![3], vec![0.0; 3]).is_err());
        assert!(GridField::new(vec![0.0], 1.0, vec![3], vec![0.0; 2]).is_err());
        assert!(GridField::new(vec![0.0, 0.0], 1.0, vec![3], vec![0.0; 3]).is_err());
        assert!(GridField::new(vec![0.0], 1.0, vec![3], vec![0.0, f64::NAN, 0.0]).is_err());
        // non-finite boundary values are tolerated
        assert!(GridField::new(vec![0.0], 1.0, vec![3], vec![f64::NEG_INFINITY, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let g = GridField::cube(-0.5, 0.5, 2, 7)
            .unwrap()
            .map_positions(|x| (x[0] * 3.1).sin() / 7.0 + x[1].exp())
            .unwrap();
        g.write_csv(&path).unwrap();
        let back = GridField::read_csv(&path).unwrap();
        assert_eq!(back.header(), g.header());
        for (a, b) in back.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(GridField::header_path(&path).exists());
    }
}
