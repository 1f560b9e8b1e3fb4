//! Small dense solves and a banded LU factorization with partial pivoting.

/// Solves `a·x = b` for a row-major `n × n` matrix, destroying `a`.
/// Returns `None` when a pivot vanishes.
pub(crate) fn solve_dense(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k] == 0.0 || !a[p * n + k].is_finite() {
            return None;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            if f != 0.0 {
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        x[k] = (x[k] - s) / a[k * n + k];
    }
    Some(x)
}

/// A square matrix with `lower` sub-diagonals and `upper` super-diagonals.
///
/// Row `i` stores columns `i - lower ..= i + upper + lower`; the extra
/// `lower` columns hold fill-in produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        BandMatrix {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.lower >= row && col <= row + self.upper + self.lower);
        row * self.width + col + self.lower - row
    }

    /// Adds `v` to entry `(row, col)`, which must lie inside the band.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        assert!(
            col + self.lower >= row && col <= row + self.upper,
            "entry ({row}, {col}) outside the band"
        );
        let s = self.slot(row, col);
        self.data[s] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col + self.lower < row || col > row + self.upper + self.lower || col >= self.n {
            return 0.0;
        }
        self.data[self.slot(row, col)]
    }

    /// `y = A·x` (before factorization).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// LU factorization in place. Fails with the index of a zero pivot.
    pub fn factor(mut self) -> Result<BandLu, usize> {
        let n = self.n;
        let reach = self.upper + self.lower;
        let mut perm = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-4;
        for k in 0..n {
            let last_row = (k + self.lower).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(k);
            }
            perm[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let f = self.data[sik] / pivot;
                self.data[sik] = f;
                if f == 0.0 {
                    continue;
                }
                let len = last_col - k;
                let rk = self.slot(k, k) + 1;
                let ri = self.slot(i, k) + 1;
                // Row i lies after row k in storage.
                let (head, tail) = self.data.split_at_mut(ri);
                let src = &head[rk..rk + len];
                for (d, s) in tail[..len].iter_mut().zip(src) {
                    *d -= f * s;
                }
            }
        }
        Ok(BandLu { m: self, perm })
    }
}

/// Result of [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n;
        let reach = m.upper + m.lower;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + m.lower).min(n - 1) {
                x[i] -= m.data[m.slot(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= m.data[m.slot(k, j)] * x[j];
            }
            x[k] = s / m.data[m.slot(k, k)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_solve_small_system() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let x = solve_dense(&mut a, &[4.0, 3.0], 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let mut s = vec![1.0, 2.0, 2.0, 4.0];
        assert!(solve_dense(&mut s, &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn band_lu_matches_residual_with_pivoting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, lo, up) = (60, 4, 3);
        let mut a = BandMatrix::zeros(n, lo, up);
        for i in 0..n {
            for j in i.saturating_sub(lo)..=(i + up).min(n - 1) {
                // weak diagonal forces row interchanges
                let v = if i == j { 0.01 } else { rng.random_range(-1.0..1.0) };
                a.add(i, j, v);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.mul_vec(&x);
        let lu = a.factor().unwrap();
        let got = lu.solve(&b);
        let err = got.iter().zip(&x).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "error {err}");
    }

    #[test]
    fn band_lu_detects_singularity() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        assert_eq!(a.factor().err(), Some(2));
    }
}
