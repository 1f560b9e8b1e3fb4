//! Damped Newton for the discrete Dirichlet problem `−Q_N u = V e^u`.
//!
//! Unknowns are the interior nodes. The face-flux stencil of
//! [`crate::operator`] is linearized analytically and the Jacobian is
//! factored by a banded LU. For `N > 2` the flux coefficient `F^{N-2}`
//! degenerates where the gradient vanishes, so the iteration runs on the
//! regularized flux `F_ε^{N-2} F F_ξ`, `F_ε = sqrt(F² + (ε h)²)`, for a
//! decreasing sequence of `ε` and finishes on the exact residual.
//!
//! q-norms with `q ≠ 2` have a flux that is not Lipschitz (`q < 2`) or whose
//! derivative degenerates (`q > 2`) where a gradient component vanishes.
//! The regularized stages also replace `|ξ_i|` by `sqrt(ξ_i² + σ²)`; the
//! exact stage then starts close to the discrete solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::finsler::{NormFamily, NormSpec};
use crate::grid::GridField;
use crate::linalg::BandMatrix;
use crate::operator::{check_operator, face_gradient};

/// Hessian floor for `q < 2` norms, whose `F²/2` has unbounded second
/// derivatives on the coordinate hyperplanes.
const HESSIAN_FLOOR: f64 = 1e-6;

/// Residual target for the `V ≡ 0` solve that provides the initial iterate.
const HARMONIC_TOL: f64 = 1e-6;

/// Step-length halvings tried before a Newton step is declared a failure.
const MAX_BACKTRACKS: usize = 40;

/// Smallest increment of the source scaling before the ramp gives up.
const MIN_LOAD_STEP: f64 = 1.0 / 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    /// Regularization scale in units of `h`.
    pub eps_reg: f64,
    /// Target `l_inf` residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking factor.
    pub damping: f64,
    /// Smoothing of `|ξ_i|` for q-norms with `q ≠ 2`, relative to the
    /// largest face gradient.
    pub smoothing: f64,
    /// Number of regularized stages before the exact one; stage `k` uses
    /// `eps_reg·10^{-k}` and `smoothing·10^{-2k}`.
    pub continuation_steps: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            eps_reg: 1.0,
            tol: 1e-9,
            max_iter: 60,
            damping: 0.5,
            smoothing: 0.1,
            continuation_steps: 4,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        if !(self.eps_reg >= 0.0 && self.eps_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps_reg must be nonnegative, got {}",
                self.eps_reg
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Dirichlet data: a field evaluated at boundary nodes, or the boundary
/// values of a grid on the same geometry.
#[derive(Clone, Copy)]
pub enum Boundary<'a> {
    Field(&'a dyn ScalarField),
    Values(&'a GridField),
}

/// One regularization stage of the continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// `ε` in units of `h`; zero for the exact stage.
    pub eps: f64,
    pub sigma: f64,
    pub iterations: usize,
    /// Accepted `l_inf` residuals, starting with the initial one.
    pub residuals: Vec<f64>,
    /// `l_inf` change of the solution relative to the previous stage.
    pub change: Option<f64>,
    /// Number of source scalings `t V` solved in this stage; only the first
    /// stage ramps `t` up to 1.
    pub load_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub stages: Vec<StageReport>,
    pub final_residual: f64,
    pub total_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: GridField,
    pub report: SolveReport,
}

/// Solves `−Q_N u = V e^u` with `u = g` on the outer node layer.
///
/// The initial iterate is the solution with `V ≡ 0` and the same data.
pub fn solve_dirichlet(
    domain: &GridField,
    spec: &NormSpec,
    n: usize,
    v: &GridField,
    boundary: Boundary<'_>,
    opts: &NewtonOptions,
) -> Result<Solution> {
    opts.validate()?;
    check_operator(domain, spec, n)?;
    if !domain.same_geometry(v) {
        return Err(Error::InvalidArgument("V lives on a different grid".into()));
    }
    if let Some(x) = v.values().iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("V must be finite and nonnegative, found {x}")));
    }
    let mut start = boundary_values(domain, boundary)?;
    let zero = domain.with_values(vec![0.0; domain.len()])?;
    let mut problem = Problem::new(&start, spec, n);
    // The initial iterate only needs to be close, not converged.
    let loose = NewtonOptions {
        tol: opts.tol.max(HARMONIC_TOL),
        ..*opts
    };
    let harmonic = problem.continuation(&mut start, &zero, &loose)?;
    let mut report = problem.continuation(&mut start, v, opts)?;
    report.total_iterations += harmonic.total_iterations;
    Ok(Solution { u: start, report })
}

fn boundary_values(domain: &GridField, boundary: Boundary<'_>) -> Result<GridField> {
    let mut values = vec![0.0; domain.len()];
    let mut x = vec![0.0; domain.dim()];
    match boundary {
        Boundary::Field(field) => {
            if field.dim() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: field.dim(),
                });
            }
            for i in (0..domain.len()).filter(|&i| domain.boundary_mask()[i]) {
                domain.position_into(i, &mut x);
                values[i] = field.value(&x);
            }
        }
        Boundary::Values(grid) => {
            if !grid.same_geometry(domain) {
                return Err(Error::InvalidArgument("boundary data lives on a different grid".into()));
            }
            for i in (0..domain.len()).filter(|&i| domain.boundary_mask()[i]) {
                values[i] = grid.values()[i];
            }
        }
    }
    if let Some(i) = (0..domain.len()).find(|&i| domain.boundary_mask()[i] && !values[i].is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite boundary value at node {i}")));
    }
    domain.with_values(values)
}

/// One stage of the continuation: flux regularization `ε` (in units of `h`)
/// and anisotropy smoothing `σ` (relative to the largest face gradient).
#[derive(Debug, Clone, Copy)]
struct Stage {
    eps: f64,
    sigma: f64,
}

struct Problem<'a> {
    spec: &'a NormSpec,
    n: usize,
    h: f64,
    strides: Vec<usize>,
    /// Unknown index of each node, `usize::MAX` on the boundary.
    unknown: Vec<usize>,
    interior: Vec<usize>,
    band: usize,
}

/// Flux parameters in absolute units.
#[derive(Debug, Clone, Copy)]
struct FluxParams {
    reg: f64,
    sigma: f64,
}

impl<'a> Problem<'a> {
    fn new(grid: &GridField, spec: &'a NormSpec, n: usize) -> Self {
        let mut unknown = vec![usize::MAX; grid.len()];
        let mut interior = Vec::new();
        for i in 0..grid.len() {
            if !grid.boundary_mask()[i] {
                unknown[i] = interior.len();
                interior.push(i);
            }
        }
        // Interior strides; the widest coupling is ±e_0 ± e_1.
        let inner: Vec<usize> = grid.shape().iter().map(|s| s - 2).collect();
        let mut istride = vec![1usize; n];
        for k in (0..n - 1).rev() {
            istride[k] = istride[k + 1] * inner[k + 1];
        }
        Problem {
            spec,
            n,
            h: grid.h(),
            strides: grid.strides().to_vec(),
            unknown,
            interior,
            band: istride[0] + istride[1],
        }
    }

    /// Exponent of a q-norm that needs smoothing, `None` otherwise.
    fn smoothed_q(&self) -> Option<f64> {
        match self.spec.family() {
            NormFamily::QNorm { q } if *q != 2.0 => Some(*q),
            _ => None,
        }
    }

    /// `F_s² = (Σ (ξ_i² + σ²)^{q/2})^{2/q}` and `g = ∇(F_s²/2)` into `g`.
    fn smoothed_square(&self, q: f64, xi: &[f64], sigma: f64, g: &mut [f64]) -> f64 {
        let s2 = sigma * sigma;
        let sum: f64 = xi.iter().map(|x| (x * x + s2).powf(0.5 * q)).sum();
        let f = sum.powf(1.0 / q);
        for (gi, x) in g.iter_mut().zip(xi) {
            *gi = f.powf(2.0 - q) * (x * x + s2).powf(0.5 * q - 1.0) * x;
        }
        f * f
    }

    fn flux(&self, xi: &[f64], p: FluxParams, out: &mut [f64]) {
        match self.smoothed_q() {
            Some(q) if p.sigma > 0.0 => {
                let f2 = self.smoothed_square(q, xi, p.sigma, out);
                if self.n > 2 {
                    let coef = (f2 + p.reg * p.reg).sqrt().powi(self.n as i32 - 2);
                    out.iter_mut().for_each(|o| *o *= coef);
                }
            }
            _ => self.spec.flux_into(self.n, xi, p.reg, out),
        }
    }

    /// `∂A/∂ξ` at `ξ`, row-major.
    fn flux_jacobian(&self, xi: &[f64], p: FluxParams, out: &mut [f64], g: &mut [f64]) {
        let n = self.n;
        let f2 = match self.smoothed_q() {
            Some(q) if p.sigma > 0.0 => {
                let f2 = self.smoothed_square(q, xi, p.sigma, g);
                let f = f2.sqrt();
                let s2 = p.sigma * p.sigma;
                for i in 0..n {
                    let wi = (xi[i] * xi[i] + s2).powf(0.5 * q - 1.0) * xi[i];
                    for j in 0..n {
                        let wj = (xi[j] * xi[j] + s2).powf(0.5 * q - 1.0) * xi[j];
                        out[i * n + j] = (2.0 - q) * f.powf(2.0 - 2.0 * q) * wi * wj;
                    }
                    let x2 = xi[i] * xi[i];
                    out[i * n + i] += f.powf(2.0 - q) * (x2 + s2).powf(0.5 * q - 2.0) * ((q - 1.0) * x2 + s2);
                }
                f2
            }
            _ => {
                self.spec.half_sq_hessian_into(xi, HESSIAN_FLOOR, out);
                if n == 2 {
                    return;
                }
                let f = self.spec.value(xi);
                if f > 0.0 {
                    self.spec.gradient_into(xi, f, g);
                    g.iter_mut().for_each(|x| *x *= f);
                } else {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                f * f
            }
        };
        if n == 2 {
            return;
        }
        let fe = (f2 + p.reg * p.reg).sqrt();
        if fe == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let a = fe.powi(n as i32 - 2);
        let b = (n as f64 - 2.0) * fe.powi(n as i32 - 4);
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = a * out[r * n + c] + b * g[r] * g[c];
            }
        }
    }

    /// Residual `Q_N u + V e^u` at the unknowns.
    fn residual(&self, u: &[f64], v: &[f64], p: FluxParams) -> Vec<f64> {
        let n = self.n;
        let mut xi = vec![0.0; n];
        let mut flux = vec![0.0; n];
        self.interior
            .iter()
            .map(|&i| {
                let mut div = 0.0;
                for (k, &s) in self.strides.iter().enumerate() {
                    face_gradient(u, &self.strides, self.h, i, k, &mut xi);
                    self.flux(&xi, p, &mut flux);
                    div += flux[k];
                    face_gradient(u, &self.strides, self.h, i - s, k, &mut xi);
                    self.flux(&xi, p, &mut flux);
                    div -= flux[k];
                }
                div / self.h + v[i] * u[i].exp()
            })
            .collect()
    }

    fn jacobian(&self, u: &[f64], v: &[f64], p: FluxParams) -> BandMatrix {
        let n = self.n;
        let h = self.h;
        let mut jac = BandMatrix::zeros(self.interior.len(), self.band, self.band);
        let mut xi = vec![0.0; n];
        let mut da = vec![0.0; n * n];
        let mut g = vec![0.0; n];
        for (row, &i) in self.interior.iter().enumerate() {
            jac.add(row, row, v[i] * u[i].exp());
            for k in 0..n {
                // Forward face contributes +A_k/h, backward face −A_k/h.
                for (face, sign) in [(i, 1.0), (i - self.strides[k], -1.0)] {
                    face_gradient(u, &self.strides, h, face, k, &mut xi);
                    self.flux_jacobian(&xi, p, &mut da, &mut g);
                    let next = face + self.strides[k];
                    let scale = sign / h;
                    for m in 0..n {
                        let d = scale * da[k * n + m];
                        if d == 0.0 {
                            continue;
                        }
                        if m == k {
                            self.couple(&mut jac, row, face, -d / h);
                            self.couple(&mut jac, row, next, d / h);
                        } else {
                            let s = self.strides[m];
                            let w = d / (4.0 * h);
                            self.couple(&mut jac, row, face + s, w);
                            self.couple(&mut jac, row, face - s, -w);
                            self.couple(&mut jac, row, next + s, w);
                            self.couple(&mut jac, row, next - s, -w);
                        }
                    }
                }
            }
        }
        jac
    }

    fn couple(&self, jac: &mut BandMatrix, row: usize, node: usize, v: f64) {
        let col = self.unknown[node];
        if col != usize::MAX {
            jac.add(row, col, v);
        }
    }

    /// Largest `F(ξ)` over all faces with a full stencil, at least one.
    fn gradient_scale(&self, u: &GridField) -> f64 {
        let mut xi = vec![0.0; self.n];
        let mut m: f64 = 0.0;
        for &i in &self.interior {
            for k in 0..self.n {
                face_gradient(u.values(), &self.strides, self.h, i, k, &mut xi);
                m = m.max(self.spec.value(&xi));
            }
        }
        m.max(1.0)
    }

    fn schedule(&self, opts: &NewtonOptions) -> Vec<Stage> {
        let eps0 = if self.n > 2 { opts.eps_reg } else { 0.0 };
        let sigma0 = if self.smoothed_q().is_some() { opts.smoothing } else { 0.0 };
        let mut stages: Vec<Stage> = Vec::new();
        if eps0 > 0.0 || sigma0 > 0.0 {
            stages.extend((0..opts.continuation_steps).map(|k| {
                let f = 10f64.powi(-(k as i32));
                Stage {
                    eps: eps0 * f,
                    sigma: sigma0 * f * f,
                }
            }));
        }
        stages.push(Stage { eps: 0.0, sigma: 0.0 });
        stages
    }

    fn continuation(&mut self, u: &mut GridField, v: &GridField, opts: &NewtonOptions) -> Result<SolveReport> {
        let schedule = self.schedule(opts);
        let gscale = self.gradient_scale(u);
        let mut stages = Vec::new();
        let mut total = 0;
        let mut prev: Option<Vec<f64>> = None;
        let mut last = f64::NAN;
        // The exact stage linearizes with the mildest regularized stage when
        // the exact Jacobian degenerates.
        let mut jac_params = FluxParams {
            reg: if self.n > 2 { 1e-6 * self.h } else { 0.0 },
            sigma: 0.0,
        };
        for (k, stage) in schedule.iter().enumerate() {
            let params = FluxParams {
                reg: stage.eps * self.h,
                sigma: stage.sigma * gscale,
            };
            if stage.eps > 0.0 || stage.sigma > 0.0 {
                jac_params = params;
            }
            let linearize = if params.reg == 0.0 && params.sigma == 0.0 && self.n > 2 {
                FluxParams { sigma: 0.0, ..jac_params }
            } else {
                params
            };
            let (iterations, residuals, load_steps) = if k == 0 {
                self.ramped(u, v.values(), params, linearize, opts, total)?
            } else {
                let (its, hist) = self.newton(u, v.values(), params, linearize, opts, total)?;
                (its, hist, 1)
            };
            total += iterations;
            last = *residuals.last().expect("initial residual is recorded");
            let change = prev.as_ref().map(|p| {
                p.iter()
                    .zip(u.values())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            });
            prev = Some(u.values().to_vec());
            stages.push(StageReport {
                eps: stage.eps,
                sigma: stage.sigma,
                iterations,
                residuals,
                change,
                load_steps,
            });
        }
        Ok(SolveReport {
            stages,
            final_residual: last,
            total_iterations: total,
        })
    }

    /// Newton on `t V` for increasing `t`, starting from the full source and
    /// shrinking the increment whenever a step fails. Only the history of the
    /// final `t = 1` solve is returned.
    fn ramped(
        &self,
        u: &mut GridField,
        v: &[f64],
        params: FluxParams,
        linearize: FluxParams,
        opts: &NewtonOptions,
        offset: usize,
    ) -> Result<(usize, Vec<f64>, usize)> {
        let intermediate = NewtonOptions {
            tol: opts.tol.max(HARMONIC_TOL),
            ..*opts
        };
        let mut t = 0.0;
        let mut dt = 1.0;
        let mut total = 0;
        let mut steps = 0;
        let mut scaled = vec![0.0; v.len()];
        let mut backup = u.values().to_vec();
        loop {
            let next = if t + dt >= 1.0 - 1e-12 { 1.0 } else { t + dt };
            for (s, x) in scaled.iter_mut().zip(v) {
                *s = next * x;
            }
            backup.copy_from_slice(u.values());
            let step_opts = if next == 1.0 { opts } else { &intermediate };
            match self.newton(u, &scaled, params, linearize, step_opts, offset + total) {
                Ok((its, history)) => {
                    total += its;
                    steps += 1;
                    if next == 1.0 {
                        return Ok((total, history, steps));
                    }
                    t = next;
                    dt = (2.0 * dt).min(1.0);
                }
                Err(e @ (Error::NewtonDiverged { .. } | Error::SingularJacobian { .. })) => {
                    u.values_mut().copy_from_slice(&backup);
                    dt /= 4.0;
                    if dt < MIN_LOAD_STEP {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn newton(
        &self,
        u: &mut GridField,
        vv: &[f64],
        params: FluxParams,
        linearize: FluxParams,
        opts: &NewtonOptions,
        offset: usize,
    ) -> Result<(usize, Vec<f64>)> {
        let mut r = self.residual(u.values(), vv, params);
        let mut norm = linf(&r);
        let mut history = vec![norm];
        let mut trial = u.values().to_vec();
        for it in 0..opts.max_iter {
            if norm <= opts.tol {
                return Ok((it, history));
            }
            let lu = self
                .jacobian(u.values(), vv, linearize)
                .factor()
                .map_err(|pivot| Error::SingularJacobian {
                    pivot,
                    iteration: offset + it,
                    iterate: u.values().to_vec(),
                })?;
            let step = lu.solve(&r);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                trial.copy_from_slice(u.values());
                for (k, &i) in self.interior.iter().enumerate() {
                    trial[i] -= alpha * step[k];
                }
                let r_new = self.residual(&trial, vv, params);
                let n_new = linf(&r_new);
                if n_new < norm {
                    u.values_mut().copy_from_slice(&trial);
                    r = r_new;
                    norm = n_new;
                    history.push(norm);
                    accepted = true;
                    break;
                }
                alpha *= opts.damping;
            }
            if !accepted {
                return Err(Error::NewtonDiverged {
                    iterations: offset + it + 1,
                    residual: norm,
                });
            }
        }
        if norm <= opts.tol {
            Ok((opts.max_iter, history))
        } else {
            Err(Error::NewtonDiverged {
                iterations: offset + opts.max_iter,
                residual: norm,
            })
        }
    }
}

fn linf(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    #[test]
    fn constant_data_without_source() {
        for spec in [NormSpec::euclidean(2).unwrap(), NormSpec::q_norm(3.0, 2).unwrap()] {
            let grid = GridField::cube(0.0, 1.0, 2, 17).unwrap();
            let v = grid.with_values(vec![0.0; grid.len()]).unwrap();
            let c = FnField::new(2, |_: &[f64]| 1.25);
            let sol = solve_dirichlet(&grid, &spec, 2, &v, Boundary::Field(&c), &NewtonOptions::default()).unwrap();
            assert!(sol.u.values().iter().all(|x| (x - 1.25).abs() < 1e-12));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = NormSpec::q_norm(3.0, 3).unwrap();
        let grid = GridField::cube(0.0, 1.0, 3, 5)
            .unwrap()
            .map_positions(|x| (x[0] + 2.0 * x[1]).sin() + x[2] * x[2])
            .unwrap();
        let v = grid.map_positions(|x| 1.0 + x[0]).unwrap();
        let p = Problem::new(&grid, &spec, 3);
        let reg = 0.05;
        let fp = FluxParams { reg, sigma: 0.0 };
        let jac = p.jacobian(grid.values(), v.values(), fp);
        let base = p.residual(grid.values(), v.values(), fp);
        let step = 1e-6;
        for (col, &node) in p.interior.iter().enumerate() {
            let mut w = grid.values().to_vec();
            w[node] += step;
            let r = p.residual(&w, v.values(), fp);
            for row in 0..p.interior.len() {
                let fd = (r[row] - base[row]) / step;
                let an = jac.get(row, col);
                assert!((fd - an).abs() < 1e-4 * (1.0 + an.abs()), "({row},{col}) fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn option_validation() {
        let bad = NewtonOptions {
            damping: 1.0,
            ..NewtonOptions::default()
        };
        assert!(bad.validate().is_err());
        let grid = GridField::cube(0.0, 1.0, 2, 5).unwrap();
        let v = grid.with_values(vec![-1.0; grid.len()]).unwrap();
        let c = FnField::new(2, |_: &[f64]| 0.0);
        let spec = NormSpec::euclidean(2).unwrap();
        assert!(solve_dirichlet(&grid, &spec, 2, &v, Boundary::Field(&c), &NewtonOptions::default()).is_err());
    }
}
