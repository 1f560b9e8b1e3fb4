use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The closed set of supported norm families.
#[derive(Debug, Clone, PartialEq)]
pub enum NormFamily {
    /// `F(ξ) = (Σ|ξ_i|^q)^{1/q}` with `1 < q < ∞`.
    QNorm { q: f64 },
    /// `F(ξ) = sqrt(Σ (a_i ξ_i)²)`; its Wulff ball is the ellipsoid with
    /// semi-axes `a_i`.
    WeightedEuclidean { weights: Vec<f64> },
}

/// An admissible Finsler norm on `ℝ^dim`.
///
/// Construction validates the family parameters, so every `NormSpec` in
/// circulation is convex, even, one-homogeneous and `C²` away from the
/// origin (with the usual caveat on coordinate hyperplanes for `q < 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormSpecRepr", into = "NormSpecRepr")]
pub struct NormSpec {
    family: NormFamily,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum NormSpecRepr {
    QNorm { q: f64, dim: usize },
    WeightedEuclidean { weights: Vec<f64>, dim: usize },
}

impl TryFrom<NormSpecRepr> for NormSpec {
    type Error = Error;

    fn try_from(repr: NormSpecRepr) -> Result<Self> {
        match repr {
            NormSpecRepr::QNorm { q, dim } => NormSpec::q_norm(q, dim),
            NormSpecRepr::WeightedEuclidean { weights, dim } => {
                if weights.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: weights.len(),
                    });
                }
                NormSpec::weighted_euclidean(weights)
            }
        }
    }
}

impl From<NormSpec> for NormSpecRepr {
    fn from(spec: NormSpec) -> Self {
        match spec.family {
            NormFamily::QNorm { q } => NormSpecRepr::QNorm { q, dim: spec.dim },
            NormFamily::WeightedEuclidean { weights } => NormSpecRepr::WeightedEuclidean {
                weights,
                dim: spec.dim,
            },
        }
    }
}

impl NormSpec {
    pub fn q_norm(q: f64, dim: usize) -> Result<Self> {
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::InvalidNorm(format!(
                "q must lie in (1, inf), got {q}"
            )));
        }
        check_dim(dim)?;
        Ok(NormSpec {
            family: NormFamily::QNorm { q },
            dim,
        })
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::q_norm(2.0, dim)
    }

    pub fn weighted_euclidean(weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        check_dim(dim)?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidNorm(format!(
                "weights must be finite and positive, got {w}"
            )));
        }
        Ok(NormSpec {
            family: NormFamily::WeightedEuclidean { weights },
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &NormFamily {
        &self.family
    }

    /// Whether the norm is the Euclidean one (q = 2 or unit weights).
    pub fn is_euclidean(&self) -> bool {
        match &self.family {
            NormFamily::QNorm { q } => *q == 2.0,
            NormFamily::WeightedEuclidean { weights } => weights.iter().all(|&w| w == 1.0),
        }
    }

    /// The norm whose value is the dual norm `F⁰`: the conjugate exponent
    /// for q-norms, reciprocal weights for weighted Euclidean norms.
    pub fn dual(&self) -> NormSpec {
        let family = match &self.family {
            NormFamily::QNorm { q } => NormFamily::QNorm { q: q / (q - 1.0) },
            NormFamily::WeightedEuclidean { weights } => NormFamily::WeightedEuclidean {
                weights: weights.iter().map(|w| 1.0 / w).collect(),
            },
        };
        NormSpec {
            family,
            dim: self.dim,
        }
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `F(ξ)`.
    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        self.check_dim(xi)?;
        Ok(self.value(xi))
    }

    /// `F(ξ)` without the dimension check.
    pub fn value(&self, xi: &[f64]) -> f64 {
        match &self.family {
            NormFamily::QNorm { q } => q_norm_value(*q, xi),
            NormFamily::WeightedEuclidean { weights } => xi
                .iter()
                .zip(weights)
                .map(|(x, a)| (a * x) * (a * x))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `F_ξ(ξ)`, undefined at the origin.
    pub fn gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xi)?;
        let mut out = vec![0.0; self.dim];
        let f = self.value(xi);
        if f == 0.0 {
            return Err(Error::ZeroVector);
        }
        self.gradient_into(xi, f, &mut out);
        Ok(out)
    }

    /// Writes `F_ξ(ξ)` into `out`, given `f = F(ξ) > 0`.
    pub(crate) fn gradient_into(&self, xi: &[f64], f: f64, out: &mut [f64]) {
        match &self.family {
            NormFamily::QNorm { q } => {
                if *q == 2.0 {
                    for (o, x) in out.iter_mut().zip(xi) {
                        *o = x / f;
                    }
                } else {
                    for (o, x) in out.iter_mut().zip(xi) {
                        *o = x.signum() * (x.abs() / f).powf(q - 1.0);
                    }
                }
            }
            NormFamily::WeightedEuclidean { weights } => {
                for ((o, x), a) in out.iter_mut().zip(xi).zip(weights) {
                    *o = a * a * x / f;
                }
            }
        }
    }

    /// The flux `A(ξ) = F^{N-1}(ξ) F_ξ(ξ)`, extended by `A(0) = 0`.
    pub fn flux(&self, exponent: usize, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xi)?;
        if exponent < 2 {
            return Err(Error::InvalidArgument(format!(
                "flux exponent N must be at least 2, got {exponent}"
            )));
        }
        let mut out = vec![0.0; self.dim];
        self.flux_into(exponent, xi, 0.0, &mut out);
        Ok(out)
    }

    /// Regularized flux `F_ε^{N-2} F F_ξ` with `F_ε = sqrt(F² + reg²)`;
    /// `reg = 0` gives the exact flux.
    pub(crate) fn flux_into(&self, exponent: usize, xi: &[f64], reg: f64, out: &mut [f64]) {
        let f = self.value(xi);
        if f == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.gradient_into(xi, f, out);
        let scale = if reg == 0.0 {
            f.powi(exponent as i32 - 1)
        } else {
            (f * f + reg * reg).sqrt().powi(exponent as i32 - 2) * f
        };
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// Hessian of `F²/2`, row-major into `out` (`dim × dim`).
    ///
    /// The matrix is 0-homogeneous. At the origin, and on coordinate
    /// hyperplanes for `q < 2` where the true Hessian is unbounded, the
    /// offending coordinates are clamped to `floor·F(ξ)`.
    pub(crate) fn half_sq_hessian_into(&self, xi: &[f64], floor: f64, out: &mut [f64]) {
        let n = self.dim;
        let f = self.value(xi);
        if f == 0.0 {
            let ones = vec![1.0; n];
            self.half_sq_hessian_into(&ones, floor, out);
            return;
        }
        match &self.family {
            NormFamily::QNorm { q } => {
                let q = *q;
                let mut grad = vec![0.0; n];
                self.gradient_into(xi, f, &mut grad);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = (2.0 - q) * grad[i] * grad[j];
                    }
                    let t = (xi[i].abs() / f).max(floor);
                    out[i * n + i] += (q - 1.0) * t.powf(q - 2.0);
                }
            }
            NormFamily::WeightedEuclidean { weights } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..n {
                    out[i * n + i] = weights[i] * weights[i];
                }
            }
        }
    }

    /// Constants `0 < c₁ ≤ c₂` with `c₁|ξ| ≤ F(ξ) ≤ c₂|ξ|`, both sharp.
    pub fn euclidean_bounds(&self) -> (f64, f64) {
        match &self.family {
            NormFamily::QNorm { q } => {
                let r = (self.dim as f64).powf(1.0 / q - 0.5);
                if *q >= 2.0 {
                    (r, 1.0)
                } else {
                    (1.0, r)
                }
            }
            NormFamily::WeightedEuclidean { weights } => {
                let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = weights.iter().copied().fold(0.0, f64::max);
                (lo, hi)
            }
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidNorm(format!(
            "dimension must be at least 2, got {dim}"
        )));
    }
    Ok(())
}

fn q_norm_value(q: f64, xi: &[f64]) -> f64 {
    if q == 2.0 {
        return xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    // Scale by the max entry to avoid overflow and underflow.
    let m = xi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * xi
        .iter()
        .map(|x| (x.abs() / m).powf(q))
        .sum::<f64>()
        .powf(1.0 / q)
}
