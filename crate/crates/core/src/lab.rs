//! Concentrating families and the measurements behind mass quantization.
//!
//! A family member with scale `λ` places an exact bubble at every configured
//! center; with several centers the member is the sum of the bubble
//! densities. Masses of analytic members are computed in Wulff polar
//! coordinates around the relevant bubble center, where the radial integral
//! has the closed form of [`BubbleParams::mass_within_closed`]. Grid-backed
//! members use cell sums and are only accepted when `h ≤ δ/8`.

use std::cell::Cell;
use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::{BubbleParams, BubbleSum};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::finsler::NormSpec;
use crate::grid::GridField;
use crate::parallel;
use crate::quadrature::{Adaptive, SphereRule};

/// Directions sampled on a Wulff sphere in 2D.
const SPHERE_SAMPLES_2D: usize = 720;
/// Azimuthal resolution of the sphere sampling in higher dimensions.
const SPHERE_RESOLUTION: usize = 48;

/// Family members entering the tail fit.
const TAIL_FIT_MEMBERS: usize = 5;

/// Subcells per axis used to split cells cut by a Wulff sphere.
const CELL_SPLIT: usize = 8;

/// Points per axis for the extrema of `sup_inf_experiment`.
const BOX_SAMPLES: usize = 33;

/// Radial samples per decade in `singleness_sup`, and the decades covered.
const SINGLENESS_PER_DECADE: usize = 25;
const SINGLENESS_DECADES: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = BoxDomain { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        BoxDomain::new(vec![lo; dim], vec![hi; dim])
    }

    /// The box spanned by the nodes of `grid`.
    pub fn of_grid(grid: &GridField) -> Self {
        BoxDomain {
            lo: grid.origin().to_vec(),
            hi: grid.upper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lo.len(),
                got: self.hi.len(),
            });
        }
        if self.lo.is_empty() {
            return Err(Error::InvalidArgument("box has no axes".into()));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(Error::InvalidArgument(format!(
                "box needs finite lo < hi, got {:?} and {:?}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (a, b))| *a <= *x && x <= b)
    }

    /// Whether the open ball `{F⁰(x − c) < r}` lies in the box. The ball
    /// reaches `r F(e_i)` along axis `i`.
    pub fn contains_ball(&self, spec: &NormSpec, center: &[f64], radius: f64) -> bool {
        if center.len() != self.dim() || spec.dim() != self.dim() {
            return false;
        }
        let mut e = vec![0.0; self.dim()];
        (0..self.dim()).all(|i| {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            let reach = radius * spec.value(&e);
            center[i] - reach >= self.lo[i] && center[i] + reach <= self.hi[i]
        })
    }

    /// Closest point of the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (a, b))| x.clamp(*a, *b))
            .collect()
    }

    /// Distance along `dir` from an interior point to the boundary.
    fn exit_distance(&self, p: &[f64], dir: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        for k in 0..self.dim() {
            if dir[k] > 0.0 {
                t = t.min((self.hi[k] - p[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                t = t.min((self.lo[k] - p[k]) / dir[k]);
            }
        }
        t.max(0.0)
    }

    /// `per_axis^N` points of the tensor grid on the box, corners included.
    fn samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut i| {
                let mut x = vec![0.0; n];
                for k in (0..n).rev() {
                    let c = i % per_axis;
                    i /= per_axis;
                    x[k] = self.lo[k] + (self.hi[k] - self.lo[k]) * c as f64 / (per_axis - 1) as f64;
                }
                x
            })
            .collect()
    }
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares; needs at least three points for the error.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - slope * a - intercept;
            r * r
        })
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: (ssr / (n - 2) as f64 / sxx).sqrt(),
    })
}

fn default_k() -> f64 {
    1.0
}

fn default_quantization_tol() -> f64 {
    1e-3
}

/// A family of concentrating fields, one member per `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub norm: NormSpec,
    pub centers: Vec<Vec<f64>>,
    pub lambda_schedule: Vec<f64>,
    #[serde(rename = "V0")]
    pub v0: f64,
    pub domain: BoxDomain,
    /// Balls `𝓑_{2kδ}` around distinct centers must be disjoint for every
    /// member.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Nodes per axis of a grid-backed family; analytic when absent.
    #[serde(default)]
    pub grid: Option<usize>,
    /// Allowed distance of `total/(C_N κ)` from an integer.
    #[serde(default = "default_quantization_tol")]
    pub quantization_tol: f64,
    /// Threshold `M′` of the single-bubble condition, if any.
    #[serde(default)]
    pub field_bound: Option<f64>,
}

impl FamilyConfig {
    /// Single-bubble or multi-bubble family with the defaults for the
    /// optional fields.
    pub fn new(
        norm: NormSpec,
        centers: Vec<Vec<f64>>,
        lambda_schedule: Vec<f64>,
        v0: f64,
        domain: BoxDomain,
    ) -> Result<Self> {
        let c = FamilyConfig {
            n: norm.dim(),
            norm,
            centers,
            lambda_schedule,
            v0,
            domain,
            k: default_k(),
            grid: None,
            quantization_tol: default_quantization_tol(),
            field_bound: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != self.norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.norm.dim(),
                got: self.n,
            });
        }
        self.domain.validate()?;
        if self.domain.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: self.domain.dim(),
            });
        }
        if self.centers.is_empty() {
            return Err(Error::InvalidArgument("a family needs at least one center".into()));
        }
        for c in &self.centers {
            self.norm.check_dim(c)?;
            if !self.domain.contains(c) {
                return Err(Error::OutsideDomain(format!("center {c:?} lies outside the domain")));
            }
        }
        if self.lambda_schedule.is_empty() {
            return Err(Error::InvalidArgument("lambda_schedule is empty".into()));
        }
        if self.lambda_schedule.iter().any(|l| !(l.is_finite() && *l >= 1.0)) {
            return Err(Error::InvalidArgument("every lambda must be finite and at least 1".into()));
        }
        if self.lambda_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("lambda_schedule must be strictly increasing".into()));
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return Err(Error::InvalidArgument(format!("V0 must be positive, got {}", self.v0)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!("k must be positive, got {}", self.k)));
        }
        if !(self.quantization_tol > 0.0) {
            return Err(Error::InvalidArgument("quantization_tol must be positive".into()));
        }
        if let Some(nodes) = self.grid {
            if nodes < 3 {
                return Err(Error::InvalidArgument(format!("grid needs at least 3 nodes per axis, got {nodes}")));
            }
            let w = self.domain.hi[0] - self.domain.lo[0];
            if self.domain.lo.iter().zip(&self.domain.hi).any(|(a, b)| (b - a - w).abs() > 1e-12 * w) {
                return Err(Error::InvalidArgument("grid-backed families need a cubic domain".into()));
            }
        }
        // The widest member has the largest δ.
        let delta = self.member(self.lambda_schedule[0])?.bubbles()[0].delta();
        let dual = self.norm.dual();
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d = dual.value(&diff(a, b));
                if d < 4.0 * self.k * delta {
                    return Err(Error::InvalidArgument(format!(
                        "centers {a:?} and {b:?} are closer than 4kδ = {}",
                        4.0 * self.k * delta
                    )));
                }
            }
        }
        Ok(())
    }

    /// The member with scale `λ`.
    pub fn member(&self, lambda: f64) -> Result<BubbleSum> {
        let bubbles = self
            .centers
            .iter()
            .map(|c| BubbleParams::new(lambda, c.clone(), self.v0, self.norm.clone()))
            .collect::<Result<Vec<_>>>()?;
        BubbleSum::new(bubbles)
    }

    fn grid_spacing(&self) -> Option<f64> {
        self.grid
            .map(|nodes| (self.domain.hi[0] - self.domain.lo[0]) / (nodes - 1) as f64)
    }

    fn sampled_member(&self, lambda: f64) -> Result<(GridField, GridField)> {
        let nodes = self.grid.expect("grid-backed family");
        let h = self.grid_spacing().expect("grid-backed family");
        let member = self.member(lambda)?;
        let limit = member.bubbles()[0].delta() / 8.0;
        if h > limit {
            return Err(Error::UnresolvedConcentration { h, limit, lambda });
        }
        let grid = GridField::new(self.domain.lo.clone(), h, vec![nodes; self.n], vec![0.0; nodes.pow(self.n as u32)])?;
        let u = grid.sample(&member)?;
        let v = grid.map_positions(|_| self.v0)?;
        Ok((u, v))
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// A field whose mass can be measured.
#[derive(Clone, Copy)]
pub enum MassField<'a> {
    /// `V e^u` given by a sum of bubble densities; `domain` bounds the
    /// admissible balls when present.
    Analytic {
        density: &'a BubbleSum,
        domain: Option<&'a BoxDomain>,
    },
    /// Node values of `u` and `V` on a common grid.
    Grid { u: &'a GridField, v: &'a GridField, spec: &'a NormSpec },
}

/// `∫_{𝓑_radius(center)} V e^u dx`.
pub fn measure_mass(field: MassField<'_>, center: &[f64], radius: f64, quad_tol: f64) -> Result<f64> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {radius}")));
    }
    if !(quad_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quad_tol must be positive, got {quad_tol}")));
    }
    match field {
        MassField::Analytic { density, domain } => {
            density.norm().check_dim(center)?;
            if let Some(d) = domain {
                if !d.contains_ball(density.norm(), center, radius) {
                    return Err(Error::OutsideDomain(format!("ball of radius {radius} at {center:?}")));
                }
            }
            if radius == 0.0 {
                return Ok(0.0);
            }
            density
                .bubbles()
                .iter()
                .map(|b| bubble_ball_mass(b, center, radius, quad_tol))
                .sum()
        }
        MassField::Grid { u, v, spec } => grid_ball_mass(u, v, spec, center, radius),
    }
}

/// `∫_{S^{N-1}} F⁰(ω)^{-N} f(θ) dω` with `θ = ω/F⁰(ω)` on the unit Wulff
/// sphere, by nested adaptive quadrature in hyperspherical angles. Every
/// angle is split where a coordinate changes sign; the remaining kinks (box
/// corners, non-smooth Wulff boundaries) are left to the bisection.
fn wulff_polar(dual: &NormSpec, rel_tol: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let n = dual.dim();
    let quad = Adaptive::new(rel_tol);
    let failure: Cell<Option<Error>> = Cell::new(None);
    let leaf = |omega: &[f64]| -> f64 {
        let f0 = dual.value(omega);
        let theta: Vec<f64> = omega.iter().map(|o| o / f0).collect();
        match f(&theta) {
            Ok(v) => f0.powi(-(n as i32)) * v,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        }
    };
    let value = polar_level(&quad, n, &[], 1.0, &leaf, &failure);
    match failure.take() {
        Some(e) => Err(e),
        None => value,
    }
}

/// Integrates over the remaining angles given the leading coordinates
/// `coords` and the product `scale` of the sines chosen so far.
fn polar_level(
    quad: &Adaptive,
    n: usize,
    coords: &[f64],
    scale: f64,
    leaf: &dyn Fn(&[f64]) -> f64,
    failure: &Cell<Option<Error>>,
) -> Result<f64> {
    let remaining = n - coords.len();
    if remaining == 2 {
        let breaks = [0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI];
        let base = coords.to_vec();
        return quad.integrate_panels(&breaks, |phi| {
            let mut omega = base.clone();
            omega.push(scale * phi.cos());
            omega.push(scale * phi.sin());
            leaf(&omega)
        });
    }
    let base = coords.to_vec();
    let power = (remaining - 2) as i32;
    quad.integrate_panels(&[0.0, 0.5 * PI, PI], |theta| {
        let mut inner = base.clone();
        inner.push(scale * theta.cos());
        let s = theta.sin();
        match polar_level(quad, n, &inner, scale * s, leaf, failure) {
            Ok(v) => v * s.powi(power),
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        }
    })
}

/// Radial mass density of a bubble: `∫_0^T V₀ e^u t^{N-1} dt` over the
/// interval `[t0, t1]`, each endpoint through the stabler closed form.
fn radial_mass(b: &BubbleParams, t0: f64, t1: f64) -> f64 {
    let surface = b.dim() as f64 * b.geometry().kappa;
    if t0 <= 0.0 {
        b.mass_within_closed(t1) / surface
    } else {
        (b.mass_outside_closed(t0) - b.mass_outside_closed(t1)) / surface
    }
}

/// Parameter where the ray `p + tθ` leaves `{F⁰(x − c) < r}`, for `p`
/// inside the ball.
fn ball_exit(dual: &NormSpec, p: &[f64], theta: &[f64], c: &[f64], r: f64) -> f64 {
    let offset = diff(p, c);
    let mut x = offset.clone();
    let mut lo = 0.0;
    // F⁰(offset + tθ) ≥ t − F⁰(offset)
    let mut hi = r + dual.value(&offset);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        for ((x, o), t) in x.iter_mut().zip(&offset).zip(theta) {
            *x = o + mid * t;
        }
        if dual.value(&x) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `∫_{𝓑_r(c)} V₀ e^{u_b}` for a single bubble.
fn bubble_ball_mass(b: &BubbleParams, c: &[f64], r: f64, quad_tol: f64) -> Result<f64> {
    let d = b.radius_of(c);
    let dual = b.norm().dual();
    if d == 0.0 {
        Ok(b.mass_within_closed(r))
    } else if d < r {
        // Polar coordinates around the bubble center, which lies inside.
        wulff_polar(&dual, quad_tol, |theta| {
            Ok(radial_mass(b, 0.0, ball_exit(&dual, b.center(), theta, c, r)))
        })
    } else {
        // The peak lies outside: the integrand is smooth around `c`.
        let n = b.dim() as i32;
        let quad = Adaptive::new(quad_tol);
        wulff_polar(&dual, quad_tol, |theta| {
            quad.integrate(0.0, r, |t| {
                let y: Vec<f64> = c.iter().zip(theta).map(|(c, th)| c + t * th).collect();
                b.density(&y) * t.powi(n - 1)
            })
        })
    }
}

/// `∫_Ω V₀ e^{u_b}` over a box containing the bubble center.
fn bubble_box_mass(b: &BubbleParams, domain: &BoxDomain, quad_tol: f64) -> Result<f64> {
    let dual = b.norm().dual();
    wulff_polar(&dual, quad_tol, |theta| {
        Ok(radial_mass(b, 0.0, domain.exit_distance(b.center(), theta)))
    })
}

/// Cell sum of `V e^u` over the ball, with cells cut by the sphere split
/// into `CELL_SPLIT^N` subcells.
fn grid_ball_mass(u: &GridField, v: &GridField, spec: &NormSpec, center: &[f64], radius: f64) -> Result<f64> {
    let n = u.dim();
    if !u.same_geometry(v) {
        return Err(Error::InvalidArgument("u and V live on different grids".into()));
    }
    if spec.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: spec.dim(),
        });
    }
    spec.check_dim(center)?;
    if !BoxDomain::of_grid(u).contains_ball(spec, center, radius) {
        return Err(Error::OutsideDomain(format!("ball of radius {radius} at {center:?}")));
    }
    if radius == 0.0 {
        return Ok(0.0);
    }
    let dual = spec.dual();
    let h = u.h();
    // F⁰ is an absolute norm, so its maximum over the half cell sits at the
    // all-positive corner.
    let reach = dual.value(&vec![0.5 * h; n]);
    let values = u.values();
    let weights = v.values();
    let total = parallel::install(|| {
        (0..u.len())
            .into_par_iter()
            .map(|i| {
                let x = u.position(i);
                let dist = dual.value(&diff(&x, center));
                if dist - reach >= radius {
                    return 0.0;
                }
                // Dual cell trimmed to the grid box.
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                let mut volume = 1.0;
                for k in 0..n {
                    let c = u.coordinate(i, k);
                    lo[k] = if c == 0 { x[k] } else { x[k] - 0.5 * h };
                    hi[k] = if c + 1 == u.shape()[k] { x[k] } else { x[k] + 0.5 * h };
                    volume *= hi[k] - lo[k];
                }
                let fraction = if dist + reach <= radius {
                    1.0
                } else {
                    let cells = CELL_SPLIT.pow(n as u32);
                    let mut y = vec![0.0; n];
                    let inside = (0..cells)
                        .filter(|&s| {
                            let mut s = s;
                            for k in 0..n {
                                let j = s % CELL_SPLIT;
                                s /= CELL_SPLIT;
                                y[k] = lo[k] + (hi[k] - lo[k]) * (j as f64 + 0.5) / CELL_SPLIT as f64 - center[k];
                            }
                            dual.value(&y) < radius
                        })
                        .count();
                    inside as f64 / cells as f64
                };
                weights[i] * values[i].exp() * volume * fraction
            })
            .collect::<Vec<f64>>()
    });
    // Summed in node order so the result does not depend on the scheduling.
    Ok(total.iter().sum())
}

/// Trapezoidal sum of `V e^u` over the whole grid.
fn grid_total_mass(u: &GridField, v: &GridField) -> f64 {
    let h = u.h();
    (0..u.len())
        .map(|i| {
            let w: f64 = (0..u.dim())
                .map(|k| {
                    let c = u.coordinate(i, k);
                    if c == 0 || c + 1 == u.shape()[k] {
                        0.5 * h
                    } else {
                        h
                    }
                })
                .product();
            w * v.values()[i] * u.values()[i].exp()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEntry {
    pub center: Vec<f64>,
    pub radius: f64,
    pub mass: f64,
    /// `mass − C_N κ`, computed from the tails rather than as a difference
    /// for analytic members.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Nearest integer to `total/(C_N κ)`.
    pub multiple: u64,
    pub deviation: f64,
    pub quantized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    /// Sorted by center, lexicographically.
    pub entries: Vec<MassEntry>,
    /// Mass over the whole domain.
    pub total_mass: f64,
    /// Sum of the entry masses; the balls are disjoint.
    pub covered_mass: f64,
    pub neck_mass: f64,
    pub quantization_estimate: f64,
    pub verdict: Verdict,
}

impl MassReport {
    fn new(mut entries: Vec<MassEntry>, total_mass: f64, bubble_mass: f64, tol: f64) -> Self {
        entries.sort_by(|a, b| lexicographic(&a.center, &b.center));
        let covered_mass: f64 = entries.iter().map(|e| e.mass).sum();
        let estimate = total_mass / bubble_mass;
        let multiple = estimate.round().max(0.0);
        let deviation = estimate - multiple;
        MassReport {
            entries,
            total_mass,
            covered_mass,
            neck_mass: total_mass - covered_mass,
            quantization_estimate: estimate,
            verdict: Verdict {
                multiple: multiple as u64,
                deviation,
                quantized: multiple >= 1.0 && deviation.abs() <= tol,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub lambda: f64,
    /// `e^{−u(p)/N}` of the member's bubbles.
    pub delta: f64,
    /// One report per requested radius, in the order given.
    pub reports: Vec<MassReport>,
}

/// Fit of `ln|mass − C_N κ|` against `ln λ` over the last members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub center: Vec<f64>,
    pub radius: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// `−N/(N−1)`, the decay of the bubble tail outside a fixed ball.
    pub predicted_slope: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub bubble_mass: f64,
    pub radii: Vec<f64>,
    pub members: Vec<FamilyMember>,
    /// Empty when the family has fewer than three members.
    pub tail_fits: Vec<TailFit>,
}

/// Mass reports of every family member at every radius, and the tail rate.
pub fn quantize_family(config: &FamilyConfig, radii: &[f64], quad_tol: f64) -> Result<QuantizeReport> {
    config.validate()?;
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(format!("radii must be positive, got {radii:?}")));
    }
    if !(quad_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quad_tol must be positive, got {quad_tol}")));
    }
    let dual = config.norm.dual();
    let separation = config
        .centers
        .iter()
        .enumerate()
        .flat_map(|(i, a)| config.centers[i + 1..].iter().map(|b| dual.value(&diff(a, b))))
        .fold(f64::INFINITY, f64::min);
    for &r in radii {
        if 2.0 * r >= separation {
            return Err(Error::InvalidArgument(format!(
                "radius {r} is not below half the center separation {separation}"
            )));
        }
        for c in &config.centers {
            if !config.domain.contains_ball(&config.norm, c, r) {
                return Err(Error::OutsideDomain(format!("ball of radius {r} at {c:?}")));
            }
        }
    }
    if config.grid.is_some() {
        // Fail before any work when a member cannot be resolved.
        let h = config.grid_spacing().expect("grid-backed family");
        for &lambda in &config.lambda_schedule {
            let limit = config.member(lambda)?.bubbles()[0].delta() / 8.0;
            if h > limit {
                return Err(Error::UnresolvedConcentration { h, limit, lambda });
            }
        }
    }
    let bubble_mass = config.member(1.0)?.bubbles()[0].geometry().bubble_mass();
    let members = parallel::install(|| {
        config
            .lambda_schedule
            .par_iter()
            .map(|&lambda| measure_member(config, lambda, radii, quad_tol, bubble_mass))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut tail_fits = Vec::new();
    if members.len() >= 3 {
        let start = members.len().saturating_sub(TAIL_FIT_MEMBERS);
        let tail = &members[start..];
        for (ri, &radius) in radii.iter().enumerate() {
            for (ci, center) in tail[0].reports[ri].entries.iter().map(|e| e.center.clone()).enumerate() {
                let (x, y): (Vec<f64>, Vec<f64>) = tail
                    .iter()
                    .map(|m| (m.lambda.ln(), m.reports[ri].entries[ci].deviation.abs()))
                    .filter(|(_, d)| *d > 0.0)
                    .map(|(l, d)| (l, d.ln()))
                    .unzip();
                let fit = fit_line(&x, &y)?;
                tail_fits.push(TailFit {
                    center,
                    radius,
                    slope: fit.slope,
                    slope_stderr: fit.slope_stderr,
                    predicted_slope: -(config.n as f64) / (config.n as f64 - 1.0),
                    members: x.len(),
                });
            }
        }
    }
    Ok(QuantizeReport {
        n: config.n,
        bubble_mass,
        radii: radii.to_vec(),
        members,
        tail_fits,
    })
}

fn measure_member(
    config: &FamilyConfig,
    lambda: f64,
    radii: &[f64],
    quad_tol: f64,
    bubble_mass: f64,
) -> Result<FamilyMember> {
    let member = config.member(lambda)?;
    let delta = member.bubbles()[0].delta();
    let mut reports = Vec::with_capacity(radii.len());
    if config.grid.is_some() {
        let (u, v) = config.sampled_member(lambda)?;
        let total = grid_total_mass(&u, &v);
        for &r in radii {
            let entries = config
                .centers
                .iter()
                .map(|c| {
                    let mass = grid_ball_mass(&u, &v, &config.norm, c, r)?;
                    Ok(MassEntry {
                        center: c.clone(),
                        radius: r,
                        mass,
                        deviation: mass - bubble_mass,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            reports.push(MassReport::new(entries, total, bubble_mass, config.quantization_tol));
        }
    } else {
        let total = member
            .bubbles()
            .iter()
            .map(|b| bubble_box_mass(b, &config.domain, quad_tol))
            .sum::<Result<f64>>()?;
        for &r in radii {
            let mut entries = Vec::with_capacity(member.bubbles().len());
            for (j, own) in member.bubbles().iter().enumerate() {
                let mut others = 0.0;
                for (k, b) in member.bubbles().iter().enumerate() {
                    if k != j {
                        others += bubble_ball_mass(b, own.center(), r, quad_tol)?;
                    }
                }
                let outside = own.mass_outside_closed(r);
                entries.push(MassEntry {
                    center: own.center().to_vec(),
                    radius: r,
                    mass: own.mass_within_closed(r) + others,
                    deviation: others - outside,
                });
            }
            reports.push(MassReport::new(entries, total, bubble_mass, config.quantization_tol));
        }
    }
    Ok(FamilyMember { lambda, delta, reports })
}

/// Greedy peak search: the global maximum first, then repeatedly the
/// maximum of `u(x) + N ln min_j F⁰(x − p_j)` over nodes at least
/// `min_separation` away from the peaks found so far, until it drops below
/// `threshold`.
pub fn detect_peaks(u: &GridField, spec: &NormSpec, threshold: f64, min_separation: f64) -> Result<Vec<Vec<f64>>> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be finite, got {threshold}")));
    }
    if !(min_separation >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "min_separation must be nonnegative, got {min_separation}"
        )));
    }
    if spec.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: spec.dim(),
        });
    }
    let dual = spec.dual();
    let n = u.dim() as f64;
    let mut peaks: Vec<Vec<f64>> = Vec::new();
    loop {
        let best = parallel::install(|| {
            (0..u.len())
                .into_par_iter()
                .filter_map(|i| {
                    let value = u.values()[i];
                    if !value.is_finite() {
                        return None;
                    }
                    if peaks.is_empty() {
                        return Some((value, i));
                    }
                    let x = u.position(i);
                    let dist = peaks
                        .iter()
                        .map(|p| dual.value(&diff(&x, p)))
                        .fold(f64::INFINITY, f64::min);
                    (dist >= min_separation && dist > 0.0).then(|| (value + n * dist.ln(), i))
                })
                // Ties go to the lowest index for reproducibility.
                .reduce_with(|a, b| match a.0.total_cmp(&b.0) {
                    Ordering::Less => b,
                    Ordering::Greater => a,
                    Ordering::Equal => {
                        if a.1 <= b.1 {
                            a
                        } else {
                            b
                        }
                    }
                })
        });
        match best {
            Some((score, i)) if score >= threshold => peaks.push(u.position(i)),
            _ => return Ok(peaks),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupInfRecord {
    pub c1: f64,
    pub lambdas: Vec<f64>,
    pub max_sigma: Vec<f64>,
    pub inf_omega: Vec<f64>,
    /// `max_Σ u + C₁ inf_Ω u` per member.
    pub values: Vec<f64>,
    pub slope_vs_ln_lambda: f64,
    pub slope_stderr: f64,
    /// `N − C₁ N/(N−1)`.
    pub predicted_slope: f64,
    /// Slope not positive beyond three standard errors.
    pub bounded: bool,
}

/// `max_Σ u_λ + C₁ inf_Ω u_λ` across the family and its trend in `ln λ`.
///
/// The maximum over `Σ` is taken over the projections of the centers and a
/// tensor sample of `Σ`; the infimum over a tensor sample of the domain,
/// whose corners carry the minimum of a single bubble.
pub fn sup_inf_experiment(config: &FamilyConfig, sigma: &BoxDomain, c1: f64) -> Result<SupInfRecord> {
    config.validate()?;
    sigma.validate()?;
    if sigma.dim() != config.n {
        return Err(Error::DimensionMismatch {
            expected: config.n,
            got: sigma.dim(),
        });
    }
    if !(sigma.contains_box_of(&config.domain)) {
        return Err(Error::OutsideDomain(format!("Σ = {sigma:?} is not inside the domain")));
    }
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::InvalidArgument(format!("C1 must be positive, got {c1}")));
    }
    if config.lambda_schedule.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 family members, got {}",
            config.lambda_schedule.len()
        )));
    }
    let sigma_points = sigma.samples(BOX_SAMPLES);
    let omega_points = config.domain.samples(BOX_SAMPLES);
    let extrema = parallel::install(|| {
        config
            .lambda_schedule
            .par_iter()
            .map(|&lambda| {
                let member = config.member(lambda)?;
                let max = config
                    .centers
                    .iter()
                    .map(|c| sigma.clamp(c))
                    .chain(sigma_points.iter().cloned())
                    .map(|x| member.value(&x))
                    .fold(f64::NEG_INFINITY, f64::max);
                let min = omega_points
                    .iter()
                    .map(|x| member.value(x))
                    .fold(f64::INFINITY, f64::min);
                Ok((max, min))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (max_sigma, inf_omega): (Vec<f64>, Vec<f64>) = extrema.into_iter().unzip();
    let values: Vec<f64> = max_sigma.iter().zip(&inf_omega).map(|(a, b)| a + c1 * b).collect();
    let x: Vec<f64> = config.lambda_schedule.iter().map(|l| l.ln()).collect();
    let fit = fit_line(&x, &values)?;
    let n = config.n as f64;
    Ok(SupInfRecord {
        c1,
        lambdas: config.lambda_schedule.clone(),
        max_sigma,
        inf_omega,
        values,
        slope_vs_ln_lambda: fit.slope,
        slope_stderr: fit.slope_stderr,
        predicted_slope: n - c1 * n / (n - 1.0),
        bounded: fit.slope <= 3.0 * fit.slope_stderr,
    })
}

impl BoxDomain {
    /// Whether `self` lies inside `outer`.
    fn contains_box_of(&self, outer: &BoxDomain) -> bool {
        self.dim() == outer.dim() && outer.contains(&self.lo) && outer.contains(&self.hi)
    }
}

/// Directions `θ` on the unit Wulff sphere `{F⁰ = 1}`.
fn wulff_directions(dual: &NormSpec) -> Vec<Vec<f64>> {
    let n = dual.dim();
    let unit: Vec<Vec<f64>> = if n == 2 {
        (0..SPHERE_SAMPLES_2D)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / SPHERE_SAMPLES_2D as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()
    } else {
        SphereRule::new(n, SPHERE_RESOLUTION).iter().map(|(w, _)| w.to_vec()).collect()
    };
    unit.into_iter()
        .map(|w| {
            let f0 = dual.value(&w);
            w.into_iter().map(|x| x / f0).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackRecord {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub sup: Vec<f64>,
    pub inf: Vec<f64>,
    /// `1/C₀` with `C₀ = max_r (M′ − inf_r − N ln r)/(M′ − sup_r − N ln r)`.
    pub alpha: f64,
    /// `(1 − α) M′`.
    pub c: f64,
    /// Sampled `max (u + N ln F⁰(x − center))`, the hypothesis bound `M`.
    pub field_bound: f64,
    /// `M′ = M + N ln 2`.
    pub shifted_bound: f64,
    /// Smallest value of `α inf_r + N(α−1) ln r + C − sup_r`.
    pub min_slack: f64,
    pub verified: bool,
}

/// Samples `u` on the Wulff spheres `{F⁰(x − center) = r}` and fits the
/// annulus Harnack inequality `sup ≤ α inf + N(α−1) ln r + C`.
///
/// With `g = M′ − u − N ln r ≥ 0` the inequality is the Harnack bound
/// `sup g ≤ C₀ inf g` with `α = 1/C₀` and `C = (1 − α) M′`, so the smallest
/// admissible `C₀` gives the largest `α`.
pub fn annulus_harnack_experiment(
    u: &dyn ScalarField,
    center: &[f64],
    radii: &[f64],
    spec: &NormSpec,
    n: usize,
    domain: Option<&BoxDomain>,
) -> Result<HarnackRecord> {
    if spec.dim() != n || u.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if spec.dim() != n { spec.dim() } else { u.dim() },
        });
    }
    spec.check_dim(center)?;
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument(format!("radii must be positive, got {radii:?}")));
    }
    if let Some(d) = domain {
        if let Some(r) = radii.iter().find(|&&r| !d.contains_ball(spec, center, r)) {
            return Err(Error::OutsideDomain(format!("sphere of radius {r} at {center:?}")));
        }
    }
    let nf = n as f64;
    let dirs = wulff_directions(&spec.dual());
    let mut sup = Vec::with_capacity(radii.len());
    let mut inf = Vec::with_capacity(radii.len());
    let mut x = vec![0.0; n];
    for &r in radii {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for d in &dirs {
            for ((x, c), t) in x.iter_mut().zip(center).zip(d) {
                *x = c + r * t;
            }
            let value = u.value(&x);
            if value.is_nan() {
                return Err(Error::OutsideDomain(format!("sphere of radius {r} at {center:?}")));
            }
            hi = hi.max(value);
            lo = lo.min(value);
        }
        sup.push(hi);
        inf.push(lo);
    }
    let field_bound = radii
        .iter()
        .zip(&sup)
        .map(|(r, s)| s + nf * r.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = field_bound + nf * 2f64.ln();
    let c0 = radii
        .iter()
        .zip(sup.iter().zip(&inf))
        .map(|(r, (s, i))| (shifted - i - nf * r.ln()) / (shifted - s - nf * r.ln()))
        .fold(1.0f64, f64::max);
    let alpha = 1.0 / c0;
    let c = (1.0 - alpha) * shifted;
    let min_slack = radii
        .iter()
        .zip(sup.iter().zip(&inf))
        .map(|(r, (s, i))| alpha * i + nf * (alpha - 1.0) * r.ln() + c - s)
        .fold(f64::INFINITY, f64::min);
    let scale = sup.iter().chain(&inf).fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(HarnackRecord {
        center: center.to_vec(),
        radii: radii.to_vec(),
        sup,
        inf,
        alpha,
        c,
        field_bound,
        shifted_bound: shifted,
        min_slack,
        verified: alpha > 0.0 && alpha <= 1.0 && min_slack >= -1e-10 * scale,
    })
}

/// `sup_{x ∈ 𝓑_R(a1)} u(x) + N ln F⁰(x − a1)`.
///
/// Rays from `a1` are sampled on a logarithmic radius grid and the best
/// samples refined by golden-section search in `ln t`; `hints` (e.g. the
/// bubble centers) are evaluated as well.
pub fn singleness_sup(u: &dyn ScalarField, dual: &NormSpec, a1: &[f64], big_r: f64, hints: &[Vec<f64>]) -> f64 {
    let n = a1.len();
    let nf = n as f64;
    let dirs = wulff_directions(dual);
    let steps = SINGLENESS_PER_DECADE * SINGLENESS_DECADES;
    let log_r = big_r.ln();
    let dlog = std::f64::consts::LN_10 / SINGLENESS_PER_DECADE as f64;
    let eval = |theta: &[f64], s: f64| -> f64 {
        let t = s.exp();
        let x: Vec<f64> = a1.iter().zip(theta).map(|(a, th)| a + t * th).collect();
        u.value(&x) + nf * s
    };
    let mut best = f64::NEG_INFINITY;
    for theta in &dirs {
        let mut top = (f64::NEG_INFINITY, 0usize);
        for k in 0..=steps {
            let s = log_r - k as f64 * dlog;
            let v = eval(theta, s);
            if v > top.0 {
                top = (v, k);
            }
        }
        if !top.0.is_finite() {
            best = best.max(top.0);
            continue;
        }
        // Golden-section refinement in the bracket around the best sample.
        let mut a = log_r - (top.1 as f64 + 1.0) * dlog;
        let mut b = (log_r - (top.1 as f64 - 1.0) * dlog).min(log_r);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = eval(theta, x1);
        let mut f2 = eval(theta, x2);
        for _ in 0..80 {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = eval(theta, x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = eval(theta, x2);
            }
        }
        best = best.max(top.0).max(f1).max(f2);
    }
    for h in hints {
        let d = dual.value(&diff(h, a1));
        if d > 0.0 && d < big_r {
            best = best.max(u.value(h) + nf * d.ln());
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglenessRecord {
    pub a1: Vec<f64>,
    pub radius: f64,
    pub lambdas: Vec<f64>,
    /// Per-member supremum of `u_n + N ln F⁰(x − a1)` over `𝓑_R(a1)`.
    pub sup_per_member: Vec<f64>,
    pub running_sup: f64,
    /// Largest increase over the first member.
    pub growth: f64,
    pub satisfied: bool,
}

/// Single-bubble condition over a sequence of fields: the supremum must stay
/// bounded, i.e. not grow beyond `growth_tol` and not exceed `bound` when
/// one is given.
pub fn singleness_check_fields(
    members: &[(f64, &dyn ScalarField)],
    dual: &NormSpec,
    a1: &[f64],
    big_r: f64,
    hints: &[Vec<f64>],
    growth_tol: f64,
    bound: Option<f64>,
) -> Result<SinglenessRecord> {
    dual.check_dim(a1)?;
    if !(big_r > 0.0 && big_r.is_finite()) {
        return Err(Error::InvalidArgument(format!("R must be positive, got {big_r}")));
    }
    if members.is_empty() {
        return Err(Error::InvalidArgument("no family members".into()));
    }
    let sups: Vec<f64> = parallel::install(|| {
        members
            .par_iter()
            .map(|(_, u)| singleness_sup(*u, dual, a1, big_r, hints))
            .collect()
    });
    let running_sup = sups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let growth = sups.iter().map(|s| s - sups[0]).fold(f64::NEG_INFINITY, f64::max);
    let no_growth = sups[0] == f64::NEG_INFINITY || growth.is_nan() || growth <= growth_tol;
    let satisfied = running_sup < f64::INFINITY && no_growth && bound.is_none_or(|m| running_sup <= m);
    Ok(SinglenessRecord {
        a1: a1.to_vec(),
        radius: big_r,
        lambdas: members.iter().map(|(l, _)| *l).collect(),
        sup_per_member: sups,
        running_sup,
        growth: if growth.is_nan() { f64::NEG_INFINITY } else { growth },
        satisfied,
    })
}

/// [`singleness_check_fields`] on the members of a family, with the
/// configured `field_bound` as `M′`.
pub fn singleness_check(config: &FamilyConfig, a1: &[f64], big_r: f64, growth_tol: f64) -> Result<SinglenessRecord> {
    config.validate()?;
    config.norm.check_dim(a1)?;
    if !config.domain.contains_ball(&config.norm, a1, big_r) {
        return Err(Error::OutsideDomain(format!("ball of radius {big_r} at {a1:?}")));
    }
    let members = config
        .lambda_schedule
        .iter()
        .map(|&l| config.member(l).map(|m| (l, m)))
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<(f64, &dyn ScalarField)> = members.iter().map(|(l, m)| (*l, m as &dyn ScalarField)).collect();
    singleness_check_fields(
        &fields,
        &config.norm.dual(),
        a1,
        big_r,
        &config.centers,
        growth_tol,
        config.field_bound,
    )
}
