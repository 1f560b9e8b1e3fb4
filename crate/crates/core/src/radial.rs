//! Radial solutions of `−Q_N u = f` in a Wulff ball and the Harnack-type
//! lower bound they satisfy.
//!
//! For radial `f ≥ 0` on `𝓑_R(p)` the solution vanishing on the boundary is
//!
//! ```text
//! u₀(r) = ∫_r^R ( ∫_0^t f(s) s^{N-1} ds )^{1/(N-1)} dt / t,
//! ```
//!
//! which is what `(Nκ)^{-1/(N-1)} ∫_r^R (∫_{𝓑_t} f)^{1/(N-1)} dt/t` reduces
//! to once the ball integral is radialized.

use std::cell::Cell;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{graded_breaks, Adaptive};

/// Relative tolerance for the nested integrals.
pub const RADIAL_TOL: f64 = 1e-10;

/// Samples of a radial function, interpolated by monotone cubics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct RadialProfile {
    r: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRepr {
    r: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<ProfileRepr> for RadialProfile {
    type Error = Error;

    fn try_from(p: ProfileRepr) -> Result<Self> {
        RadialProfile::new(p.r, p.values)
    }
}

impl From<RadialProfile> for ProfileRepr {
    fn from(p: RadialProfile) -> Self {
        ProfileRepr {
            r: p.r,
            values: p.values,
        }
    }
}

impl RadialProfile {
    pub fn new(r: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if r.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: r.len(),
                got: values.len(),
            });
        }
        if r.len() < 2 {
            return Err(Error::InvalidArgument("a profile needs at least two samples".into()));
        }
        if r[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("profile must start at r = 0, got {}", r[0])));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || !r[r.len() - 1].is_finite() {
            return Err(Error::InvalidArgument("profile radii must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("profile values must be finite".into()));
        }
        let slopes = pchip_slopes(&r, &values);
        Ok(RadialProfile { r, values, slopes })
    }

    /// Samples `f` at the given radii.
    pub fn from_fn(r: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = r.iter().map(|&t| f(t)).collect();
        RadialProfile::new(r, values)
    }

    /// `count` uniformly spaced radii on `[0, r_max]`.
    pub fn uniform_radii(r_max: f64, count: usize) -> Vec<f64> {
        (0..count).map(|i| r_max * i as f64 / (count - 1) as f64).collect()
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn r_max(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    /// Monotone cubic (Fritsch-Carlson) interpolation, `None` outside the
    /// sampled range.
    pub fn eval(&self, t: f64) -> Option<f64> {
        if !(t >= 0.0 && t <= self.r_max()) {
            return None;
        }
        let k = match self.r.partition_point(|&x| x <= t) {
            0 => 0,
            p if p >= self.r.len() => self.r.len() - 2,
            p => p - 1,
        };
        let h = self.r[k + 1] - self.r[k];
        let s = (t - self.r[k]) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (d0, d1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Some(h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1)
    }

    /// Two-column CSV `r,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "r,value")?;
        for (r, v) in self.r.iter().zip(&self.values) {
            writeln!(out, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "r,value" => {}
            _ => return Err(Error::Parse(format!("{}: missing `r,value` header", path.display()))),
        }
        let (mut r, mut values) = (Vec::new(), Vec::new());
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected two columns", no + 2)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", no + 2)))
            };
            r.push(parse(a)?);
            values.push(parse(b)?);
        }
        RadialProfile::new(r, values)
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d.fill(delta[0]);
        return d;
    }
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn check_radial_args(big_r: f64, n: usize, kappa: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("N must be at least 2, got {n}")));
    }
    if !(big_r > 0.0 && big_r.is_finite()) {
        return Err(Error::InvalidArgument(format!("R must be positive, got {big_r}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// Solver state shared by the closure and profile front ends.
struct Radial<'a> {
    f: &'a dyn Fn(f64) -> f64,
    n: usize,
    quad: Adaptive,
    negative: Cell<Option<f64>>,
}

impl Radial<'_> {
    fn density(&self, s: f64) -> f64 {
        let v = (self.f)(s);
        if v < 0.0 || v.is_nan() {
            self.negative.set(Some(s));
        }
        v * s.powi(self.n as i32 - 1)
    }

    fn check(&self) -> Result<()> {
        match self.negative.get() {
            Some(s) => Err(Error::InvalidArgument(format!("f must be nonnegative, f({s}) < 0"))),
            None => Ok(()),
        }
    }

    /// `∫_a^b f(s) s^{N-1} ds`.
    fn moment(&self, a: f64, b: f64) -> Result<f64> {
        self.quad.integrate(a, b, |s| self.density(s))
    }

    /// `∫_a^b (m_a + ∫_a^t f s^{N-1})^{1/(N-1)} dt/t` with `m_a = m(a)`.
    fn outer(&self, a: f64, b: f64, m_a: f64) -> Result<f64> {
        let e = 1.0 / (self.n as f64 - 1.0);
        let failure = Cell::new(None);
        let integrand = |t: f64| match self.moment(a, t) {
            Ok(m) => (m_a + m).max(0.0).powf(e) / t,
            Err(err) => {
                failure.set(Some(err));
                0.0
            }
        };
        let value = if a == 0.0 {
            // The integrand behaves like t^{1/(N-1)} near the origin.
            self.quad.integrate_panels(&graded_breaks(b, 40, 0.5), integrand)?
        } else {
            self.quad.integrate(a, b, integrand)?
        };
        match failure.into_inner() {
            Some(err) => Err(err),
            None => Ok(value),
        }
    }

    /// `u₀` at sorted radii `points ⊂ [0, R]`.
    fn solve(&self, points: &[f64], big_r: f64) -> Result<Vec<f64>> {
        // Cumulative moments at every breakpoint, then integrate outward-in.
        let mut knots: Vec<f64> = points.to_vec();
        if knots.last() != Some(&big_r) {
            knots.push(big_r);
        }
        let mut m = vec![0.0; knots.len()];
        let mut prev = 0.0;
        for (k, &t) in knots.iter().enumerate() {
            let start = if k == 0 { 0.0 } else { m[k - 1] };
            m[k] = start + self.moment(prev, t)?;
            prev = t;
        }
        let mut u = vec![0.0; knots.len()];
        for k in (0..knots.len() - 1).rev() {
            u[k] = u[k + 1] + self.outer(knots[k], knots[k + 1], m[k])?;
        }
        self.check()?;
        u.truncate(points.len());
        Ok(u)
    }
}

/// `u₀` at the given radii for a radial right-hand side given as a closure.
///
/// Radii must be sorted, nonnegative and at most `R`; the result vanishes at
/// `R` and is nonincreasing.
pub fn radial_solve_fn(
    f: impl Fn(f64) -> f64,
    radii: &[f64],
    big_r: f64,
    n: usize,
    kappa: f64,
) -> Result<Vec<f64>> {
    check_radial_args(big_r, n, kappa)?;
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("radii must be strictly increasing".into()));
    }
    if radii.iter().any(|&r| !(r >= 0.0 && r <= big_r)) {
        return Err(Error::OutsideDomain(format!("radii must lie in [0, {big_r}]")));
    }
    let solver = Radial {
        f: &f,
        n,
        quad: Adaptive::new(RADIAL_TOL).with_abs_tol(1e-300),
        negative: Cell::new(None),
    };
    solver.solve(radii, big_r)
}

/// Solves with `f` read from a sampled profile; the result is sampled at the
/// profile radii up to `R`, with `R` appended when it is not a sample.
pub fn radial_solve(f: &RadialProfile, big_r: f64, n: usize, kappa: f64) -> Result<RadialProfile> {
    check_radial_args(big_r, n, kappa)?;
    if big_r > f.r_max() {
        return Err(Error::OutsideDomain(format!(
            "R = {big_r} exceeds the profile range {}",
            f.r_max()
        )));
    }
    if let Some(&v) = f.values().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("f must be nonnegative, found {v}")));
    }
    let mut radii: Vec<f64> = f.radii().iter().copied().filter(|&r| r < big_r).collect();
    radii.push(big_r);
    // Clamp away interpolation overshoot below zero; PCHIP keeps sign on
    // monotone data but not across a local extremum at zero.
    let values = radial_solve_fn(
        |s| f.eval(s).expect("inside profile range").max(0.0),
        &radii,
        big_r,
        n,
        kappa,
    )?;
    RadialProfile::new(radii, values)
}

/// `∫_{𝓑_r} f dx = Nκ ∫_0^r f(s) s^{N-1} ds`.
pub fn ball_integral(f: impl Fn(f64) -> f64, r: f64, n: usize, kappa: f64) -> Result<f64> {
    check_radial_args(r.max(f64::MIN_POSITIVE), n, kappa)?;
    let solver = Radial {
        f: &f,
        n,
        quad: Adaptive::new(RADIAL_TOL).with_abs_tol(1e-300),
        negative: Cell::new(None),
    };
    let m = solver.moment(0.0, r)?;
    solver.check()?;
    Ok(n as f64 * kappa * m)
}

/// `(Nκ)^{-1/(N-1)} (∫_{𝓑_r} f dx)^{1/(N-1)} ln(R/r)`, a lower bound for
/// `u(p) − inf_{𝓑_R(p)} u` when `−Q_N u ≥ f` in `𝓑_R(p)`.
pub fn harnack_lower_bound_fn(
    f: impl Fn(f64) -> f64,
    r: f64,
    big_r: f64,
    n: usize,
    kappa: f64,
) -> Result<f64> {
    if !(r > 0.0 && r < big_r) {
        return Err(Error::InvalidArgument(format!("need 0 < r < R, got r = {r}, R = {big_r}")));
    }
    let mass = ball_integral(f, r, n, kappa)?;
    let e = 1.0 / (n as f64 - 1.0);
    Ok((n as f64 * kappa).powf(-e) * mass.powf(e) * (big_r / r).ln())
}

pub fn harnack_lower_bound(f: &RadialProfile, r: f64, big_r: f64, n: usize, kappa: f64) -> Result<f64> {
    if r > f.r_max() {
        return Err(Error::OutsideDomain(format!(
            "r = {r} exceeds the profile range {}",
            f.r_max()
        )));
    }
    harnack_lower_bound_fn(|s| f.eval(s).expect("inside profile range").max(0.0), r, big_r, n, kappa)
}
