//! Gauss-Legendre rules, adaptive panel integration and product rules on the
//! unit sphere.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// An `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on the Legendre polynomial `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess for the i-th root, counted from x = 1.
            let mut x = ((i as f64 + 0.75) / (nf + 0.5) * PI).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        nodes.reverse();
        weights.reverse();
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive bisection with a pair of Gauss-Legendre rules.
///
/// A panel is accepted when the coarse and refined estimates agree to within
/// `tol` scaled by the magnitude of the running total.
#[derive(Debug, Clone)]
pub struct Adaptive {
    rule: GaussLegendre,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: usize,
}

impl Adaptive {
    pub fn new(rel_tol: f64) -> Self {
        Adaptive {
            rule: GaussLegendre::new(10),
            rel_tol,
            abs_tol: 0.0,
            max_depth: 40,
        }
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let whole = self.rule.integrate(a, b, &f);
        let mut failed = None;
        let global = whole.abs();
        let value = self.recurse(&f, a, b, whole, global, 0, &mut failed);
        match failed {
            None => Ok(value),
            Some(err) => Err(Error::NotConverged {
                what: "adaptive quadrature",
                iterations: self.max_depth,
                last_error: err,
            }),
        }
    }

    /// Integrates over consecutive panels `[b_0, b_1], [b_1, b_2], ...`.
    pub fn integrate_panels<F: Fn(f64) -> f64>(&self, breaks: &[f64], f: F) -> Result<f64> {
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += self.integrate(w[0], w[1], &f)?;
        }
        Ok(total)
    }

    fn recurse<F: Fn(f64) -> f64>(
        &self,
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        global: f64,
        depth: usize,
        failed: &mut Option<f64>,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = self.rule.integrate(a, m, f);
        let right = self.rule.integrate(m, b, f);
        let refined = left + right;
        let err = (refined - whole).abs();
        // Every panel is held to the tolerance of the whole integral.
        let scale = refined.abs().max(whole.abs()).max(global);
        if err <= self.rel_tol * scale || err <= self.abs_tol || err <= 64.0 * f64::EPSILON * scale {
            return refined;
        }
        if depth >= self.max_depth || m <= a || m >= b {
            let worst = failed.map_or(err, |e: f64| e.max(err));
            *failed = Some(worst);
            return refined;
        }
        self.recurse(f, a, m, left, global, depth + 1, failed)
            + self.recurse(f, m, b, right, global, depth + 1, failed)
    }
}

/// Geometrically graded breakpoints `0, b·ratio^{k}, ..., b` used for
/// integrands with a weak singularity at the origin.
pub fn graded_breaks(b: f64, levels: usize, ratio: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(levels + 2);
    out.push(0.0);
    for k in (1..=levels).rev() {
        out.push(b * ratio.powi(k as i32));
    }
    out.push(b);
    out
}

/// A product quadrature rule on the Euclidean unit sphere `S^{N-1}`.
///
/// Weights sum to the surface area `N·ω_N`.
#[derive(Debug, Clone)]
pub struct SphereRule {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SphereRule {
    /// `resolution` is the number of azimuthal nodes; each polar angle uses
    /// `resolution / 2` nodes.
    ///
    /// Every angle is split into Gauss-Legendre panels at the coordinate
    /// hyperplanes, where the norms of interest lose smoothness.
    pub fn new(dim: usize, resolution: usize) -> Self {
        assert!(dim >= 2, "sphere rules need dimension >= 2");
        let m = resolution.max(8);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let polar_rule = GaussLegendre::new((m / 4).max(2));
        let polar_nodes: Vec<(f64, f64)> = [(0.0, PI / 2.0), (PI / 2.0, PI)]
            .iter()
            .flat_map(|&(a, b)| polar_rule.mapped(a, b).collect::<Vec<_>>())
            .collect();
        let azimuth_rule = GaussLegendre::new((m / 4).max(2));
        let azimuth_nodes: Vec<(f64, f64)> = (0..4)
            .flat_map(|k| {
                let a = k as f64 * PI / 2.0;
                azimuth_rule.mapped(a, a + PI / 2.0).collect::<Vec<_>>()
            })
            .collect();
        // Hyperspherical coordinates: theta_1..theta_{N-2} in [0, pi], phi in [0, 2pi).
        let n_polar = dim - 2;
        let mut idx = vec![0usize; n_polar];
        loop {
            let mut prefix = 1.0;
            let mut weight = 1.0;
            let mut coords = Vec::with_capacity(dim);
            for (k, &i) in idx.iter().enumerate() {
                let (theta, w) = polar_nodes[i];
                coords.push(prefix * theta.cos());
                weight *= w * theta.sin().powi((dim - 2 - k) as i32);
                prefix *= theta.sin();
            }
            for &(phi, w) in &azimuth_nodes {
                let mut p = coords.clone();
                p.push(prefix * phi.cos());
                p.push(prefix * phi.sin());
                points.push(p);
                weights.push(weight * w);
            }
            // Odometer over the polar indices.
            let mut k = 0;
            loop {
                if k == n_polar {
                    return SphereRule {
                        dim,
                        points,
                        weights,
                    };
                }
                idx[k] += 1;
                if idx[k] < polar_nodes.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }
}
