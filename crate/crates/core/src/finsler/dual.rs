use crate::error::{Error, Result};
use crate::finsler::NormSpec;
use crate::linalg::solve_dense;

/// Default tolerance of the numerical dual norm.
pub const DUAL_TOL: f64 = 1e-10;

/// Iteration cap of the inner maximization.
pub const DUAL_MAX_ITER: usize = 10_000;

impl NormSpec {
    /// `F⁰(x) = sup{⟨x, ξ⟩ : F(ξ) ≤ 1}`.
    ///
    /// Every built-in family has a closed-form dual, so `tol` only matters
    /// for families without one; it is still validated.
    pub fn dual_norm(&self, x: &[f64], tol: f64) -> Result<f64> {
        self.check_dim(x)?;
        check_tol(tol)?;
        Ok(self.dual().value(x))
    }

    /// `F⁰(x)` by maximizing over the unit sphere of `F` numerically, without
    /// using any closed form for the dual.
    ///
    /// The supremum is found as the maximum of the concave function
    /// `φ(ξ) = ⟨x, ξ⟩ − F(ξ)²/2`, whose maximizer ξ* satisfies
    /// `F(ξ*) = F⁰(x)` and `⟨x, ξ*⟩ = F(ξ*)²`. Damped Newton steps with a
    /// backtracking line search are used; the returned value is the
    /// normalized objective `⟨x, ξ⟩ / F(ξ)`, which is second-order accurate.
    pub fn dual_norm_ascent(&self, x: &[f64], tol: f64) -> Result<f64> {
        self.check_dim(x)?;
        check_tol(tol)?;
        let n = self.dim();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        if xx == 0.0 {
            return Ok(0.0);
        }
        // Best multiple of x as the starting point.
        let fx = self.value(x);
        let mut xi: Vec<f64> = x.iter().map(|v| v * xx / (fx * fx)).collect();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        let mut fgrad = vec![0.0; n];
        let objective = |xi: &[f64]| -> f64 {
            let f = self.value(xi);
            dot(x, xi) - 0.5 * f * f
        };
        let mut phi = objective(&xi);
        let mut mu = 0.0;
        let mut last = f64::INFINITY;
        for _ in 0..DUAL_MAX_ITER {
            let f = self.value(&xi);
            self.gradient_into(&xi, f, &mut fgrad);
            for i in 0..n {
                grad[i] = x[i] - f * fgrad[i];
            }
            self.half_sq_hessian_into(&xi, 1e-12, &mut hess);
            let value = dot(x, &xi) / f;
            let mut step = loop {
                let mut h = hess.clone();
                for i in 0..n {
                    h[i * n + i] += mu;
                }
                match solve_dense(&mut h, &grad, n) {
                    Some(d) if d.iter().all(|v| v.is_finite()) => break d,
                    _ => mu = if mu == 0.0 { 1e-12 } else { mu * 10.0 },
                }
                if mu > 1e12 {
                    return Err(Error::NotConverged {
                        what: "dual norm ascent",
                        iterations: 0,
                        last_error: f64::NAN,
                    });
                }
            };
            let decrement = dot(&grad, &step);
            last = decrement / (value * value);
            if last <= 1e-3 * tol {
                return Ok(value);
            }
            // Backtracking on the concave objective.
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial = vec![0.0; n];
            for _ in 0..60 {
                for i in 0..n {
                    trial[i] = xi[i] + t * step[i];
                }
                let p = objective(&trial);
                if p >= phi + 1e-4 * t * decrement {
                    xi.copy_from_slice(&trial);
                    phi = p;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Converged to roundoff: no further ascent is representable.
                if last <= tol {
                    return Ok(value);
                }
                mu = if mu == 0.0 { 1e-8 } else { mu * 10.0 };
                step.iter_mut().for_each(|s| *s = 0.0);
                continue;
            }
            mu *= 0.1;
            if mu < 1e-14 {
                mu = 0.0;
            }
        }
        Err(Error::NotConverged {
            what: "dual norm ascent",
            iterations: DUAL_MAX_ITER,
            last_error: last,
        })
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
