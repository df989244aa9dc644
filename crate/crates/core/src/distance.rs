//! Riemannian distance by shooting.
//!
//! The unknown is the initial "velocity covector" `v = L·ξ₀`: its length
//! `p(x, v)` is the candidate distance and its direction the unit initial
//! covector. Damped Newton with a finite-difference Jacobian drives the
//! endpoint of the flow onto the target.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::geodesic::HamiltonStepper;
use crate::metric::{MetricPatch, ProfileKind};

pub const GRADIENT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingOptions {
    /// Upper bound on the chart distance `|x − y|` of a query.
    pub max_chord: f64,
    /// Largest RK4 step; each shot uses `ceil(L / max_step)` equal steps.
    pub max_step: f64,
    pub max_iterations: usize,
    /// Target chart distance between the flow endpoint and `y`.
    pub position_tol: f64,
    /// Re-solve from a perturbed start and compare lengths.
    pub check_ambiguity: bool,
    pub min_separation: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            max_chord: 1.0,
            max_step: 1e-3,
            max_iterations: 50,
            position_tol: 1e-10,
            check_ambiguity: true,
            min_separation: 1e-6,
        }
    }
}

/// A converged shot from `x` to `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Shot {
    /// Riemannian length of the connecting geodesic.
    pub length: f64,
    /// Unit covector at `x`.
    pub xi_start: Vec<f64>,
    /// Unit covector at `y`; it equals `∇_y dist(x, y)`.
    pub xi_end: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl Shot {
    /// Initial guess for a nearby query.
    pub fn velocity(&self) -> Vec<f64> {
        self.xi_start.iter().map(|v| v * self.length).collect()
    }
}

struct Endpoint {
    x: Vec<f64>,
    xi: Vec<f64>,
    inside: bool,
}

/// Distance solver bound to one patch.
#[derive(Clone, Debug)]
pub struct Shooter<'a> {
    patch: &'a MetricPatch,
    opts: ShootingOptions,
}

impl<'a> Shooter<'a> {
    pub fn new(patch: &'a MetricPatch) -> Self {
        Shooter {
            patch,
            opts: ShootingOptions::default(),
        }
    }

    pub fn with_options(patch: &'a MetricPatch, opts: ShootingOptions) -> Self {
        Shooter { patch, opts }
    }

    pub fn options(&self) -> &ShootingOptions {
        &self.opts
    }

    fn flat_half_space(&self) -> bool {
        self.patch.alpha().kind() == ProfileKind::ExpFlat
    }

    /// Flows from `x` with velocity covector `v` for parameter `p(x, v)`.
    fn endpoint(&self, x: &[f64], v: &[f64]) -> Option<Endpoint> {
        let patch = self.patch;
        let n = patch.dim();
        let q = patch.hamiltonian_sq_unchecked(x, v);
        if !(q > 0.0) || !q.is_finite() {
            return None;
        }
        let length = q.sqrt();
        let steps = ((length / self.opts.max_step).ceil() as usize).max(1);
        let h = length / steps as f64;
        let mut state: Vec<f64> = x.iter().copied().chain(v.iter().map(|c| c / length)).collect();
        let mut stepper = HamiltonStepper::new(patch);
        let mut inside = patch.in_domain(x);
        let coupling = patch.coupling_index();
        let flat = self.flat_half_space();
        for i in 0..steps {
            if let (true, Some(m)) = (flat, coupling) {
                // Euclidean half-space x_m ≥ 0 with the path heading into it:
                // the rest of the geodesic is a straight line.
                if state[m] >= 0.0 && state[n + m] >= 0.0 {
                    let remaining = (steps - i) as f64 * h;
                    let p = state[n..].iter().map(|c| c * c).sum::<f64>().sqrt();
                    for k in 0..n {
                        state[k] += remaining * state[n + k] / p;
                    }
                    inside &= patch.in_domain(&state[..n]);
                    break;
                }
            }
            stepper.step(&mut state, h);
            if !state.iter().all(|c| c.is_finite()) {
                return None;
            }
            if inside && !patch.in_domain(&state[..n]) {
                inside = false;
            }
            if patch.alpha_at(&state[..n]).abs() >= 1.0 {
                return None;
            }
        }
        Some(Endpoint {
            x: state[..n].to_vec(),
            xi: state[n..].to_vec(),
            inside,
        })
    }

    fn check_query(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.patch.check_domain(x)?;
        self.patch.check_domain(y)?;
        let chord = chart_distance(x, y);
        if chord < self.opts.min_separation {
            return Err(LabError::domain(format!(
                "points are closer than {} in the chart",
                self.opts.min_separation
            )));
        }
        if chord > self.opts.max_chord {
            return Err(LabError::domain(format!(
                "chord {chord} exceeds the shooting range {}",
                self.opts.max_chord
            )));
        }
        Ok(chord)
    }

    /// Covector `g(x)(y − x)`: the Euclidean-chord initial guess.
    fn chord_guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut v = vec![0.0; d.len()];
        self.patch.lower(self.patch.alpha_at(x), &d, &mut v);
        v
    }

    fn newton(&self, x: &[f64], y: &[f64], guess: Vec<f64>) -> Result<(Vec<f64>, Endpoint, usize, f64)> {
        let n = self.patch.dim();
        let residual_of = |e: &Endpoint| -> (DVector<f64>, f64) {
            let r = DVector::from_iterator(n, y.iter().zip(&e.x).map(|(a, b)| a - b));
            let norm = r.norm();
            (r, norm)
        };
        let mut v = guess;
        let mut end = self.endpoint(x, &v).ok_or(LabError::Convergence {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        let (mut r, mut res) = residual_of(&end);
        let mut iterations = 0;
        while res > self.opts.position_tol {
            if iterations >= self.opts.max_iterations {
                return Err(LabError::Convergence { iterations, residual: res });
            }
            iterations += 1;
            let scale = v.iter().map(|c| c.abs()).fold(0.0, f64::max).max(1e-3);
            let eps = 1e-7 * scale;
            let mut jac = DMatrix::zeros(n, n);
            for col in 0..n {
                let mut vp = v.clone();
                vp[col] += eps;
                let ep = self.endpoint(x, &vp).ok_or(LabError::Convergence { iterations, residual: res })?;
                for row in 0..n {
                    jac[(row, col)] = (ep.x[row] - end.x[row]) / eps;
                }
            }
            let delta = jac
                .lu()
                .solve(&r)
                .ok_or(LabError::Convergence { iterations, residual: res })?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let trial: Vec<f64> = v.iter().zip(delta.iter()).map(|(a, d)| a + lambda * d).collect();
                if let Some(e) = self.endpoint(x, &trial) {
                    let (rt, nt) = residual_of(&e);
                    if nt < res {
                        v = trial;
                        end = e;
                        r = rt;
                        res = nt;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(LabError::Convergence { iterations, residual: res });
            }
        }
        Ok((v, end, iterations, res))
    }

    fn finish(&self, x: &[f64], v: Vec<f64>, end: Endpoint, iterations: usize, residual: f64) -> Result<Shot> {
        if !end.inside {
            return Err(LabError::domain("the connecting geodesic leaves the working domain"));
        }
        let length = self.patch.hamiltonian_sq_unchecked(x, &v).sqrt();
        let xi_start = v.iter().map(|c| c / length).collect();
        Ok(Shot {
            length,
            xi_start,
            xi_end: end.xi,
            iterations,
            residual,
        })
    }

    /// Shoots from `x` to `y`, optionally warm-started from a velocity covector.
    pub fn shoot(&self, x: &[f64], y: &[f64], warm: Option<&[f64]>) -> Result<Shot> {
        self.check_query(x, y)?;
        let guess = match warm {
            Some(v) => v.to_vec(),
            None => self.chord_guess(x, y),
        };
        let (v, end, iterations, residual) = match self.newton(x, y, guess) {
            Ok(sol) => sol,
            Err(e) if warm.is_some() => {
                // a stale warm start can sit outside the basin; retry from the chord
                let _ = e;
                self.newton(x, y, self.chord_guess(x, y))?
            }
            Err(e) => return Err(e),
        };
        let shot = self.finish(x, v, end, iterations, residual)?;
        if self.opts.check_ambiguity {
            let alt = self.perturbed_guess(x, y);
            if let Ok((v2, e2, it2, r2)) = self.newton(x, y, alt) {
                if let Ok(other) = self.finish(x, v2, e2, it2, r2) {
                    if (other.length - shot.length).abs() > 1e-6 {
                        return Err(LabError::Ambiguity {
                            first: shot.length,
                            second: other.length,
                        });
                    }
                }
            }
        }
        Ok(shot)
    }

    /// Chord guess rotated by about 0.2 rad and lengthened by 10%.
    fn perturbed_guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut v = self.chord_guess(x, y);
        let n = v.len();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        // a unit vector orthogonal to v
        let k = (0..n)
            .min_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap())
            .unwrap();
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        let dot = v[k] / norm;
        for i in 0..n {
            w[i] -= dot * v[i] / norm;
        }
        let wn = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        for i in 0..n {
            v[i] = 1.1 * (v[i] + 0.2 * norm * w[i] / wn);
        }
        v
    }

    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.shoot(x, y, None)?.length)
    }

    /// `∇_x dist(x, y)` by central differences with step [`GRADIENT_STEP`].
    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let base = self.shoot(x, y, None)?;
        let warm = base.velocity();
        let quiet = Shooter::with_options(
            self.patch,
            ShootingOptions {
                check_ambiguity: false,
                ..self.opts.clone()
            },
        );
        let mut grad = vec![0.0; x.len()];
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            xp[k] += GRADIENT_STEP;
            let mut xm = x.to_vec();
            xm[k] -= GRADIENT_STEP;
            let dp = quiet.shoot(&xp, y, Some(&warm))?.length;
            let dm = quiet.shoot(&xm, y, Some(&warm))?.length;
            grad[k] = (dp - dm) / (2.0 * GRADIENT_STEP);
        }
        Ok(grad)
    }
}

pub fn chart_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Riemannian distance with the default shooting options.
pub fn dist(patch: &MetricPatch, x: &[f64], y: &[f64]) -> Result<Shot> {
    Shooter::new(patch).shoot(x, y, None)
}

pub fn dist_gradient(patch: &MetricPatch, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Shooter::new(patch).gradient(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{closed_form_fan, flow, FanParams, PhasePoint, DEFAULT_STEP};
    use crate::metric::{AlphaProfile, Family};

    #[test]
    fn flat_region_distance_is_euclidean() {
        let p = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        let x = [0.1, 0.05, -0.2];
        let y = [-0.3, 0.6, 0.1];
        let shot = dist(&p, &x, &y).unwrap();
        assert!((shot.length - chart_distance(&x, &y)).abs() < 1e-12);
        let g = dist_gradient(&p, &x, &y).unwrap();
        let d = chart_distance(&x, &y);
        for k in 0..3 {
            assert!((g[k] - (x[k] - y[k]) / d).abs() < 1e-8);
        }
    }

    #[test]
    fn fan_endpoints_are_at_arclength_distance() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let fan = FanParams::new(Family::ThreeD, vec![0.05], vec![0.3]);
        let a = closed_form_fan(&p, &fan, -0.5).unwrap();
        let b = closed_form_fan(&p, &fan, 0.2).unwrap();
        let shot = dist(&p, &a, &b).unwrap();
        assert!((shot.length - 0.7).abs() < 1e-9, "{}", shot.length);
    }

    #[test]
    fn returned_covector_reaches_target() {
        let p = MetricPatch::odd_focus(5, AlphaProfile::exp_flat()).unwrap();
        let x = [0.1, 0.0, -0.8, 0.05, 0.0];
        let y = [0.0, 0.1, -0.3, -0.05, 0.1];
        let shot = dist(&p, &x, &y).unwrap();
        let start = PhasePoint::new(x.to_vec(), shot.xi_start.clone());
        let steps = (shot.length / DEFAULT_STEP).ceil();
        let path = flow(&p, &start, (0.0, shot.length), shot.length / steps).unwrap();
        assert!(chart_distance(&path.last().x, &y) < 1e-8);
        let h = p.hamiltonian(&y, &shot.xi_end).unwrap();
        assert!((h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_queries() {
        let p = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        assert!(matches!(dist(&p, &[0.0; 3], &[0.0; 3]), Err(LabError::Domain(_))));
        assert!(matches!(dist(&p, &[0.0; 3], &[0.9, 0.9, 0.0]), Err(LabError::Domain(_))));
    }
}
