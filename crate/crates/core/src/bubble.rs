//! Classified entire solutions of `−Q_N u = V₀ e^u`.
//!
//! For `λ > 0` and a center `p`,
//!
//! ```text
//! u(x) = ln( C_N λ^N / (V₀ (1 + λ^{N/(N-1)} F⁰(x-p)^{N/(N-1)})^N) )
//! ```
//!
//! and `∫ V₀ e^u = C_N κ` independently of `λ` and `p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::finsler::{liouville_constant, NormSpec, WulffGeometry};
use crate::quadrature::Adaptive;

/// Default relative tolerance of the mass quadratures.
pub const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BubbleRepr", into = "BubbleRepr")]
pub struct BubbleParams {
    lambda: f64,
    center: Vec<f64>,
    v0: f64,
    norm: NormSpec,
    // cached
    dual: NormSpec,
    geometry: WulffGeometry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BubbleRepr {
    lambda: f64,
    p: Vec<f64>,
    #[serde(rename = "V0")]
    v0: f64,
    #[serde(rename = "N")]
    n: usize,
    norm: NormSpec,
}

impl TryFrom<BubbleRepr> for BubbleParams {
    type Error = Error;

    fn try_from(r: BubbleRepr) -> Result<Self> {
        if r.n != r.norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: r.norm.dim(),
                got: r.n,
            });
        }
        BubbleParams::new(r.lambda, r.p, r.v0, r.norm)
    }
}

impl From<BubbleParams> for BubbleRepr {
    fn from(b: BubbleParams) -> Self {
        BubbleRepr {
            lambda: b.lambda,
            n: b.norm.dim(),
            p: b.center,
            v0: b.v0,
            norm: b.norm,
        }
    }
}

/// The `λ` that makes the peak value `u(p)` vanish: `(V₀/C_N)^{1/N}`.
pub fn lambda_from_peak(n: usize, v0: f64) -> Result<f64> {
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::InvalidArgument(format!("V0 must be positive, got {v0}")));
    }
    Ok((v0 / liouville_constant(n)?).powf(1.0 / n as f64))
}

impl BubbleParams {
    pub fn new(lambda: f64, center: Vec<f64>, v0: f64, norm: NormSpec) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(Error::InvalidArgument(format!("V0 must be positive, got {v0}")));
        }
        norm.check_dim(&center)?;
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("center must be finite".into()));
        }
        Ok(BubbleParams {
            lambda,
            center,
            v0,
            dual: norm.dual(),
            geometry: WulffGeometry::new(&norm),
            norm,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn norm(&self) -> &NormSpec {
        &self.norm
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    pub fn geometry(&self) -> &WulffGeometry {
        &self.geometry
    }

    /// `F⁰(x − p)`.
    pub fn radius_of(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        self.dual.value(&d)
    }

    /// The bubble as a function of the Wulff radius `r = F⁰(x − p)`.
    pub fn profile(&self, r: f64) -> f64 {
        let n = self.dim() as f64;
        let a = n / (n - 1.0);
        let s = (self.lambda * r).powf(a);
        (self.geometry.c_n / self.v0).ln() + n * self.lambda.ln() - n * s.ln_1p()
    }

    /// Radial derivative `du/dr`.
    pub fn profile_derivative(&self, r: f64) -> f64 {
        let n = self.dim() as f64;
        let a = n / (n - 1.0);
        let lr = self.lambda * r;
        -n * a * self.lambda * lr.powf(a - 1.0) / (1.0 + lr.powf(a))
    }

    /// `u(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.norm.check_dim(x)?;
        Ok(self.profile(self.radius_of(x)))
    }

    /// `u(p) = ln(C_N λ^N / V₀)`.
    pub fn peak(&self) -> f64 {
        self.profile(0.0)
    }

    /// Concentration scale `δ = e^{−u(p)/N}`.
    pub fn delta(&self) -> f64 {
        (-self.peak() / self.dim() as f64).exp()
    }

    /// `V₀ e^{u(x)}`.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.v0 * self.profile(self.radius_of(x)).exp()
    }

    /// The blow-up rescaling `ũ(y) = u(δy + q) + N ln δ`, itself a bubble
    /// with scale `λδ` centered at `(p − q)/δ`.
    pub fn rescaled(&self, delta: f64, q: &[f64]) -> Result<BubbleParams> {
        self.norm.check_dim(q)?;
        let center = self
            .center
            .iter()
            .zip(q)
            .map(|(p, q)| (p - q) / delta)
            .collect();
        BubbleParams::new(self.lambda * delta, center, self.v0, self.norm.clone())
    }

    /// The same bubble moved to another center.
    pub fn with_center(&self, center: Vec<f64>) -> Result<BubbleParams> {
        BubbleParams::new(self.lambda, center, self.v0, self.norm.clone())
    }

    /// `∫_{ℝ^N} V₀ e^u dx`.
    pub fn mass(&self, quad_tol: f64) -> Result<f64> {
        self.mass_within(f64::INFINITY, quad_tol)
    }

    /// `∫_{𝓑_T(p)} V₀ e^u dx`, by radialization plus the substitution
    /// `s = (λt)^{N/(N-1)}`, splitting `s > 1` off with `v = 1/s`.
    pub fn mass_within(&self, radius: f64, quad_tol: f64) -> Result<f64> {
        check_tol(quad_tol)?;
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
        }
        if radius == 0.0 {
            return Ok(0.0);
        }
        let s_max = self.s_of(radius);
        let q = Adaptive::new(quad_tol);
        let inner = q.integrate(0.0, s_max.min(1.0), |s| self.s_integrand(s))?;
        let outer = if s_max > 1.0 {
            q.integrate(1.0 / s_max, 1.0, |v| self.v_integrand(v))?
        } else {
            0.0
        };
        Ok(self.radial_factor() * (inner + outer))
    }

    /// `∫_{ℝ^N \ 𝓑_T(p)} V₀ e^u dx`, computed directly (not as a difference),
    /// so it stays accurate when it is far below the total mass.
    pub fn mass_outside(&self, radius: f64, quad_tol: f64) -> Result<f64> {
        check_tol(quad_tol)?;
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
        }
        if radius.is_infinite() {
            return Ok(0.0);
        }
        let s_min = self.s_of(radius);
        let q = Adaptive::new(quad_tol);
        let total = if s_min < 1.0 {
            q.integrate(s_min, 1.0, |s| self.s_integrand(s))? + q.integrate(0.0, 1.0, |v| self.v_integrand(v))?
        } else {
            q.integrate(0.0, 1.0 / s_min, |v| self.v_integrand(v))?
        };
        Ok(self.radial_factor() * total)
    }

    /// `∫_{𝓑_T(p)} V₀ e^u dx = C_N κ (s/(1+s))^{N-1}` with `s = (λT)^{N/(N-1)}`.
    pub fn mass_within_closed(&self, radius: f64) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let s = self.s_of(radius);
        let frac = if s.is_finite() { s / (1.0 + s) } else { 1.0 };
        self.geometry.bubble_mass() * frac.powi(self.dim() as i32 - 1)
    }

    /// `C_N κ (1 − (s/(1+s))^{N-1})`, evaluated without cancellation.
    pub fn mass_outside_closed(&self, radius: f64) -> f64 {
        if radius <= 0.0 {
            return self.geometry.bubble_mass();
        }
        let s = self.s_of(radius);
        let n1 = (self.dim() - 1) as f64;
        self.geometry.bubble_mass() * -(n1 * (-1.0 / (1.0 + s)).ln_1p()).exp_m1()
    }

    /// `N κ`, the surface factor of the radialization identity.
    fn radial_factor(&self) -> f64 {
        self.dim() as f64 * self.geometry.kappa
    }

    fn s_of(&self, r: f64) -> f64 {
        let n = self.dim() as f64;
        (self.lambda * r).powf(n / (n - 1.0))
    }

    /// `V₀ e^{u(t)} t^{N-1} dt/ds` at `t = s^{(N-1)/N} / λ`. Gauss nodes are
    /// interior, so the endpoints `s = 0` and `v = 0` are never evaluated.
    fn s_integrand(&self, s: f64) -> f64 {
        let n = self.dim() as f64;
        let e = (n - 1.0) / n;
        let t = s.powf(e) / self.lambda;
        let dt_ds = e * s.powf(e - 1.0) / self.lambda;
        self.v0 * self.profile(t).exp() * t.powf(n - 1.0) * dt_ds
    }

    /// The `s`-integrand after `s = 1/v`, including the `1/v²` Jacobian.
    fn v_integrand(&self, v: f64) -> f64 {
        self.s_integrand(1.0 / v) / (v * v)
    }
}

impl ScalarField for BubbleParams {
    fn dim(&self) -> usize {
        self.norm.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.profile(self.radius_of(x))
    }
}

/// `V₀ e^u` given as a sum of bubble densities with a common `V₀`; the field
/// value is `u = ln(Σ_k e^{u_k})`. Not a solution of the equation, but a
/// faithful multi-peak test density for the mass measurement pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSum {
    bubbles: Vec<BubbleParams>,
}

impl BubbleSum {
    pub fn new(bubbles: Vec<BubbleParams>) -> Result<Self> {
        let first = bubbles
            .first()
            .ok_or_else(|| Error::InvalidArgument("a bubble sum needs at least one bubble".into()))?;
        if bubbles.iter().any(|b| b.v0 != first.v0 || b.norm != first.norm) {
            return Err(Error::InvalidArgument(
                "all bubbles in a sum must share V0 and the norm".into(),
            ));
        }
        Ok(BubbleSum { bubbles })
    }

    pub fn bubbles(&self) -> &[BubbleParams] {
        &self.bubbles
    }

    pub fn v0(&self) -> f64 {
        self.bubbles[0].v0
    }

    pub fn norm(&self) -> &NormSpec {
        &self.bubbles[0].norm
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.bubbles.iter().map(|b| b.density(x)).sum()
    }
}

impl ScalarField for BubbleSum {
    fn dim(&self) -> usize {
        self.bubbles[0].dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        // log-sum-exp of the individual profiles
        let values: Vec<f64> = self.bubbles.iter().map(|b| b.value(x)).collect();
        let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quadrature tolerance must be positive, got {tol}")));
    }
    Ok(())
}
