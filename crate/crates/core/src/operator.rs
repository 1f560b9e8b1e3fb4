//! Face-centered finite differences for `Q_N u = div(F^{N-1}(∇u) F_ξ(∇u))`.
//!
//! The flux is evaluated at the midpoint of every face between two
//! neighbouring nodes. The normal component of the gradient there is the
//! one-sided difference across the face, the tangential components are
//! averages of the centered differences at the two adjacent nodes. The
//! divergence is the difference of face fluxes, so the scheme telescopes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finsler::NormSpec;
use crate::grid::GridField;
use crate::parallel;

/// Checks the operator preconditions and returns the dimension.
pub(crate) fn check_operator(u: &GridField, spec: &NormSpec, n: usize) -> Result<()> {
    if spec.dim() != n || u.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if spec.dim() != n { spec.dim() } else { u.dim() },
        });
    }
    if u.shape().iter().any(|&s| s < 3) {
        return Err(Error::GridTooSmall(u.shape().to_vec()));
    }
    Ok(())
}

/// Gradient at the face between `node` and `node + e_axis`.
pub(crate) fn face_gradient(
    values: &[f64],
    strides: &[usize],
    h: f64,
    node: usize,
    axis: usize,
    out: &mut [f64],
) {
    let next = node + strides[axis];
    for (j, &s) in strides.iter().enumerate() {
        out[j] = if j == axis {
            (values[next] - values[node]) / h
        } else {
            (values[node + s] - values[node - s] + values[next + s] - values[next - s]) / (4.0 * h)
        };
    }
}

/// Whether the face between `node` and `node + e_axis` has a full stencil.
fn face_in_range(u: &GridField, node: usize, axis: usize) -> bool {
    (0..u.dim()).all(|k| {
        let c = u.coordinate(node, k);
        if k == axis {
            c + 1 < u.shape()[k]
        } else {
            c >= 1 && c + 2 <= u.shape()[k]
        }
    })
}

/// Flux vector `A(ξ)` at the face between `node` and `node + e_axis`.
pub fn face_flux(u: &GridField, spec: &NormSpec, n: usize, node: usize, axis: usize) -> Result<Vec<f64>> {
    check_operator(u, spec, n)?;
    if node >= u.len() || axis >= n || !face_in_range(u, node, axis) {
        return Err(Error::InvalidArgument(format!(
            "face ({node}, axis {axis}) has no full stencil"
        )));
    }
    let mut xi = vec![0.0; n];
    let mut out = vec![0.0; n];
    face_gradient(u.values(), u.strides(), u.h(), node, axis, &mut xi);
    spec.flux_into(n, &xi, 0.0, &mut out);
    Ok(out)
}

/// Discrete divergence at interior node `i` with flux regularization `reg`.
pub(crate) fn divergence_at(
    values: &[f64],
    strides: &[usize],
    h: f64,
    spec: &NormSpec,
    n: usize,
    reg: f64,
    i: usize,
    xi: &mut [f64],
    flux: &mut [f64],
) -> f64 {
    let mut div = 0.0;
    for (k, &s) in strides.iter().enumerate() {
        face_gradient(values, strides, h, i, k, xi);
        spec.flux_into(n, xi, reg, flux);
        let forward = flux[k];
        face_gradient(values, strides, h, i - s, k, xi);
        spec.flux_into(n, xi, reg, flux);
        div += forward - flux[k];
    }
    div / h
}

/// `Q_N u` at interior nodes; boundary nodes are set to zero.
pub fn apply_qn(u: &GridField, spec: &NormSpec, n: usize) -> Result<GridField> {
    check_operator(u, spec, n)?;
    let values = u.values();
    let strides = u.strides();
    let h = u.h();
    let mask = u.boundary_mask();
    let out: Vec<f64> = parallel::install(|| {
        (0..u.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n]),
                |(xi, flux), i| {
                    if mask[i] {
                        0.0
                    } else {
                        divergence_at(values, strides, h, spec, n, 0.0, i, xi, flux)
                    }
                },
            )
            .collect()
    });
    u.with_values(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub l_inf: f64,
    /// Sum of `|Q_N u + V e^u|` times the cell volume `h^N`.
    pub l1: f64,
    pub interior_nodes: usize,
}

/// Pointwise residual `Q_N u + V e^u`, zero on the boundary layer.
pub fn residual(u: &GridField, v: &GridField, spec: &NormSpec, n: usize) -> Result<GridField> {
    if !u.same_geometry(v) {
        return Err(Error::InvalidArgument("u and V live on different grids".into()));
    }
    let q = apply_qn(u, spec, n)?;
    let values = q
        .values()
        .iter()
        .zip(u.values())
        .zip(v.values())
        .zip(u.boundary_mask())
        .map(|(((q, u), v), &b)| if b { 0.0 } else { q + v * u.exp() })
        .collect();
    u.with_values(values)
}

/// Norms of the residual over nodes at least `margin` cells from the boundary.
pub fn residual_norms(
    u: &GridField,
    v: &GridField,
    spec: &NormSpec,
    n: usize,
    margin: usize,
) -> Result<ResidualNorms> {
    if margin < 1 {
        return Err(Error::InvalidArgument("margin must be at least 1".into()));
    }
    let r = residual(u, v, spec, n)?;
    let cell = u.h().powi(n as i32);
    let mut norms = ResidualNorms {
        l_inf: 0.0,
        l1: 0.0,
        interior_nodes: 0,
    };
    for (i, val) in r.values().iter().enumerate() {
        if u.depth(i) >= margin {
            norms.l_inf = norms.l_inf.max(val.abs());
            norms.l1 += val.abs() * cell;
            norms.interior_nodes += 1;
        }
    }
    if norms.interior_nodes == 0 {
        return Err(Error::EmptyInterior(margin));
    }
    Ok(norms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_fields_have_zero_operator() {
        for spec in [
            NormSpec::q_norm(1.5, 2).unwrap(),
            NormSpec::q_norm(3.0, 2).unwrap(),
            NormSpec::weighted_euclidean(vec![1.0, 2.0]).unwrap(),
        ] {
            let u = GridField::cube(-1.0, 1.0, 2, 9)
                .unwrap()
                .map_positions(|x| 0.3 * x[0] - 1.7 * x[1] + 4.0)
                .unwrap();
            let q = apply_qn(&u, &spec, 2).unwrap();
            assert!(q.values().iter().all(|v| v.abs() < 1e-12), "{spec:?}");
        }
        let u3 = GridField::cube(0.0, 1.0, 3, 5)
            .unwrap()
            .map_positions(|x| x[0] + 2.0 * x[1] - x[2])
            .unwrap();
        let q = apply_qn(&u3, &NormSpec::q_norm(3.0, 3).unwrap(), 3).unwrap();
        assert!(q.values().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn quadratic_euclidean_laplacian() {
        // N = 2, q = 2 reduces to the five-point Laplacian, exact on quadratics.
        let u = GridField::cube(-1.0, 1.0, 2, 11)
            .unwrap()
            .map_positions(|x| x[0] * x[0] + 3.0 * x[1] * x[1])
            .unwrap();
        let q = apply_qn(&u, &NormSpec::euclidean(2).unwrap(), 2).unwrap();
        for i in 0..u.len() {
            if !u.boundary_mask()[i] {
                assert!((q.values()[i] - 8.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn errors() {
        let spec = NormSpec::euclidean(2).unwrap();
        let small = GridField::cube(0.0, 1.0, 2, 2).unwrap();
        assert!(matches!(apply_qn(&small, &spec, 2), Err(Error::GridTooSmall(_))));
        let g = GridField::cube(0.0, 1.0, 2, 5).unwrap();
        assert!(apply_qn(&g, &NormSpec::euclidean(3).unwrap(), 3).is_err());
        assert!(matches!(residual_norms(&g, &g, &spec, 2, 3), Err(Error::EmptyInterior(3))));
        let zero = residual_norms(&g, &g, &spec, 2, 1).unwrap();
        assert_eq!(zero.l_inf, 0.0);
        assert_eq!(zero.interior_nodes, 9);
    }
}
