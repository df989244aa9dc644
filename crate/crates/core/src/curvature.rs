//! Christoffel symbols and Riemann curvature by central finite differences of
//! the metric.
//!
//! Convention: `R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce} Γ^e_{db} − Γ^a_{de} Γ^e_{cb}`,
//! so that the round sphere has positive sectional curvature.

use nalgebra::DMatrix;

use crate::error::{LabError, Result};
use crate::metric::MetricPatch;

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Christoffel symbols stored as `gamma[i * n * n + j * n + k] = Γ^i_{jk}`.
#[derive(Clone, Debug)]
pub struct Christoffel {
    n: usize,
    gamma: Vec<f64>,
}

impl Christoffel {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.n + j) * self.n + k]
    }
}

fn metric_unchecked(patch: &MetricPatch, x: &[f64]) -> Result<DMatrix<f64>> {
    patch.metric_from_alpha(patch.alpha_at(x))
}

fn shifted(x: &[f64], axis: usize, by: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[axis] += by;
    y
}

fn christoffel_unchecked(patch: &MetricPatch, x: &[f64], h: f64) -> Result<Christoffel> {
    let n = patch.dim();
    // dg[k] = ∂_k g
    let mut dg = Vec::with_capacity(n);
    for k in 0..n {
        let plus = metric_unchecked(patch, &shifted(x, k, h))?;
        let minus = metric_unchecked(patch, &shifted(x, k, -h))?;
        dg.push((plus - minus) / (2.0 * h));
    }
    let mut cometric = DMatrix::identity(n, n);
    let alpha = patch.alpha_at(x);
    for &(a, b) in patch.pairs() {
        cometric[(a, b)] = alpha;
        cometric[(b, a)] = alpha;
    }
    let mut gamma = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    let c = cometric[(i, l)];
                    if c != 0.0 {
                        s += c * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                    }
                }
                gamma[(i * n + j) * n + k] = 0.5 * s;
            }
        }
    }
    Ok(Christoffel { n, gamma })
}

fn check_stencil(patch: &MetricPatch, x: &[f64], h: f64) -> Result<()> {
    patch.check_domain(x)?;
    if !(h > 0.0) {
        return Err(LabError::domain("finite-difference step must be positive"));
    }
    for k in 0..patch.dim() {
        for s in [-2.0, 2.0] {
            if !patch.in_domain(&shifted(x, k, s * h)) {
                return Err(LabError::domain(format!(
                    "finite-difference stencil with step {h} leaves the domain along axis {k}"
                )));
            }
        }
    }
    Ok(())
}

pub fn christoffel(patch: &MetricPatch, x: &[f64], h: f64) -> Result<Christoffel> {
    check_stencil(patch, x, h)?;
    christoffel_unchecked(patch, x, h)
}

/// `R^upper_{lower[0] lower[1] lower[2]}` at `x` with finite-difference step `h`.
pub fn curvature_component(
    patch: &MetricPatch,
    upper: usize,
    lower: [usize; 3],
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let n = patch.dim();
    if upper >= n || lower.iter().any(|&i| i >= n) {
        return Err(LabError::domain("curvature index out of range"));
    }
    check_stencil(patch, x, h)?;
    let [b, c, d] = lower;
    let a = upper;
    let center = christoffel_unchecked(patch, x, h)?;
    let dgamma = |axis: usize, i: usize, j: usize, k: usize| -> Result<f64> {
        let plus = christoffel_unchecked(patch, &shifted(x, axis, h), h)?;
        let minus = christoffel_unchecked(patch, &shifted(x, axis, -h), h)?;
        Ok((plus.get(i, j, k) - minus.get(i, j, k)) / (2.0 * h))
    };
    let mut r = dgamma(c, a, d, b)? - dgamma(d, a, c, b)?;
    for e in 0..n {
        r += center.get(a, c, e) * center.get(e, d, b) - center.get(a, d, e) * center.get(e, c, b);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::AlphaProfile;

    // Closed form of R^3_{232} (1-based) for α(s) = s, derived symbolically
    // from the block-inverse metric.
    fn r3232_linear(x2: f64) -> f64 {
        -3.0 * (1.0 + x2 * x2) / (4.0 * (1.0 - x2 * x2).powi(2))
    }

    #[test]
    fn euclidean_is_flat() {
        let p = MetricPatch::euclidean(3).unwrap();
        let r = curvature_component(&p, 2, [1, 2, 1], &[0.1, 0.2, 0.3], DEFAULT_FD_STEP).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn linear_profile_matches_closed_form() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let r0 = curvature_component(&p, 2, [1, 2, 1], &[0.0; 3], DEFAULT_FD_STEP).unwrap();
        assert!((r0 + 0.75).abs() < 1e-5, "{r0}");
        for i in 0..=20 {
            let x2 = -0.5 + i as f64 * 0.05;
            let r = curvature_component(&p, 2, [1, 2, 1], &[0.0, x2, 0.0], DEFAULT_FD_STEP).unwrap();
            assert!((r - r3232_linear(x2)).abs() < 1e-4, "x2={x2}: {r} vs {}", r3232_linear(x2));
        }
    }

    #[test]
    fn antisymmetric_in_last_two_indices() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(2).unwrap()).unwrap();
        let x = [0.0, 0.3, 0.1];
        let a = curvature_component(&p, 2, [1, 2, 1], &x, DEFAULT_FD_STEP).unwrap();
        let b = curvature_component(&p, 2, [1, 1, 2], &x, DEFAULT_FD_STEP).unwrap();
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn stencil_outside_domain_is_rejected() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let err = curvature_component(&p, 2, [1, 2, 1], &[0.0, 0.749, 0.0], DEFAULT_FD_STEP);
        assert!(matches!(err, Err(LabError::Domain(_))));
        let big = curvature_component(&p, 2, [1, 2, 1], &[0.0, 0.0, 0.0], 0.6);
        assert!(matches!(big, Err(LabError::Domain(_))));
    }
}
