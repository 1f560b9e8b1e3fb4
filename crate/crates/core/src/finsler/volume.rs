use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::finsler::{NormFamily, NormSpec};
use crate::parallel;
use crate::quadrature::SphereRule;

/// Samples per Monte-Carlo chunk; each chunk owns an independent stream, so
/// results do not depend on the number of worker threads.
const MC_CHUNK: u64 = 1 << 16;

/// `C_N = N (N²/(N-1))^{N-1}`.
pub fn liouville_constant(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "the Liouville constant needs N >= 2, got {n}"
        )));
    }
    let nf = n as f64;
    Ok(nf * (nf * nf / (nf - 1.0)).powi(n as i32 - 1))
}

/// Volume of the Euclidean unit ball in `ℝ^N`.
pub fn euclidean_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    PI.powf(nf / 2.0) / gamma(nf / 2.0 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolumeMethod {
    /// Gamma-function formula available for every built-in family.
    ClosedForm,
    /// Radial quadrature `κ = (1/N) ∫_{S^{N-1}} F⁰(ω)^{-N} dω`, refined
    /// until two successive resolutions agree to `tol`.
    Quadrature { tol: f64 },
    /// Hit-or-miss sampling in the bounding box of the Wulff ball.
    MonteCarlo { samples: u64, seed: u64 },
}

impl VolumeMethod {
    /// Quadrature in 2D, Monte-Carlo with 10⁷ samples otherwise.
    pub fn default_for(dim: usize) -> Self {
        if dim == 2 {
            VolumeMethod::Quadrature { tol: 1e-12 }
        } else {
            VolumeMethod::MonteCarlo {
                samples: 10_000_000,
                seed: 0,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    /// Standard error for Monte-Carlo, the last refinement difference for
    /// quadrature, zero for closed forms.
    pub error: f64,
}

/// `κ = |{x : F⁰(x) < 1}|`.
pub fn wulff_volume(spec: &NormSpec, n: usize, method: VolumeMethod) -> Result<VolumeEstimate> {
    if n != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: n,
        });
    }
    match method {
        VolumeMethod::ClosedForm => Ok(VolumeEstimate {
            value: closed_form_volume(spec),
            error: 0.0,
        }),
        VolumeMethod::Quadrature { tol } => quadrature_volume(spec, tol),
        VolumeMethod::MonteCarlo { samples, seed } => monte_carlo_volume(spec, samples, seed),
    }
}

fn closed_form_volume(spec: &NormSpec) -> f64 {
    let n = spec.dim();
    match spec.family() {
        NormFamily::QNorm { q } => {
            // The Wulff ball is the unit ball of the conjugate exponent.
            let p = q / (q - 1.0);
            (2.0 * gamma(1.0 + 1.0 / p)).powi(n as i32) / gamma(1.0 + n as f64 / p)
        }
        NormFamily::WeightedEuclidean { weights } => {
            euclidean_ball_volume(n) * weights.iter().product::<f64>()
        }
    }
}

fn quadrature_volume(spec: &NormSpec, tol: f64) -> Result<VolumeEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = spec.dim();
    let dual = spec.dual();
    let estimate = |resolution: usize| -> f64 {
        // κ = (1/N) ∫ ρ(ω)^N dω with ρ(ω) = 1 / F⁰(ω) the radial function.
        let rule = SphereRule::new(n, resolution);
        rule.iter()
            .map(|(dir, w)| w * dual.value(dir).powi(-(n as i32)))
            .sum::<f64>()
            / n as f64
    };
    let (mut resolution, cap) = if n == 2 { (32, 1 << 20) } else { (16, 1024) };
    let mut prev = estimate(resolution);
    loop {
        resolution *= 2;
        let next = estimate(resolution);
        let diff = (next - prev).abs();
        if diff <= tol * next.abs() {
            return Ok(VolumeEstimate {
                value: next,
                error: diff,
            });
        }
        if resolution >= cap {
            return Err(Error::NotConverged {
                what: "Wulff volume quadrature",
                iterations: resolution,
                last_error: diff / next.abs(),
            });
        }
        prev = next;
    }
}

fn monte_carlo_volume(spec: &NormSpec, samples: u64, seed: u64) -> Result<VolumeEstimate> {
    if samples < 2 {
        return Err(Error::InvalidArgument(
            "Monte-Carlo needs at least two samples".into(),
        ));
    }
    let n = spec.dim();
    let dual = spec.dual();
    // Half-widths of the bounding box: sup{x_i : F⁰(x) ≤ 1} = F(e_i).
    let half: Vec<f64> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            spec.value(&e)
        })
        .collect();
    let box_volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: u64 = parallel::install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c);
                let count = MC_CHUNK.min(samples - c * MC_CHUNK);
                let mut x = vec![0.0; n];
                let mut hits = 0u64;
                for _ in 0..count {
                    for (xi, h) in x.iter_mut().zip(&half) {
                        *xi = rng.random_range(-*h..*h);
                    }
                    if dual.value(&x) < 1.0 {
                        hits += 1;
                    }
                }
                hits
            })
            .sum()
    });
    let p = hits as f64 / samples as f64;
    let std_error = box_volume * (p * (1.0 - p) / (samples as f64 - 1.0)).sqrt();
    Ok(VolumeEstimate {
        value: box_volume * p,
        error: std_error,
    })
}

/// Monte-Carlo volume that fails when the standard error exceeds `rel_tol`.
pub fn monte_carlo_volume_checked(
    spec: &NormSpec,
    samples: u64,
    seed: u64,
    rel_tol: f64,
) -> Result<VolumeEstimate> {
    let est = monte_carlo_volume(spec, samples, seed)?;
    if est.error > rel_tol * est.value {
        return Err(Error::NotConverged {
            what: "Monte-Carlo volume (too few samples)",
            iterations: samples as usize,
            last_error: est.error / est.value,
        });
    }
    Ok(est)
}

/// Dimension-dependent constants attached to a norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WulffGeometry {
    pub dim: usize,
    /// `|𝓑₁|`, volume of the unit Wulff ball.
    pub kappa: f64,
    pub c_n: f64,
    pub omega_n: f64,
}

impl WulffGeometry {
    pub fn new(spec: &NormSpec) -> Self {
        let dim = spec.dim();
        WulffGeometry {
            dim,
            kappa: closed_form_volume(spec),
            c_n: liouville_constant(dim).expect("norm dimension is at least 2"),
            omega_n: euclidean_ball_volume(dim),
        }
    }

    /// Mass of one bubble, `C_N κ`.
    pub fn bubble_mass(&self) -> f64 {
        self.c_n * self.kappa
    }
}
