//! Hamiltonian geodesic flow and the closed-form geodesic fans.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::metric::{Family, MetricPatch};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const JACOBIAN_STEP: f64 = 1e-5;
/// Drift of `p` along a path beyond which integration is abandoned.
pub const INSTABILITY_DRIFT: f64 = 1e-6;
/// Tolerance on `p(x, ξ) = 1` for a starting phase point.
pub const COSPHERE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Self {
        PhasePoint { x, xi }
    }

    /// Rescales `xi` onto the unit cosphere at `x`.
    pub fn on_cosphere(patch: &MetricPatch, x: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        let p = patch.hamiltonian(&x, &xi)?;
        if p == 0.0 {
            return Err(LabError::domain("zero covector has no unit direction"));
        }
        let xi = xi.into_iter().map(|v| v / p).collect();
        Ok(PhasePoint { x, xi })
    }
}

/// Uniformly sampled solution of Hamilton's equations; sample `i` sits at
/// arclength `t0 + i * step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub t0: f64,
    pub step: f64,
    pub samples: Vec<PhasePoint>,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.step
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.samples.len().saturating_sub(1))
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    /// Index of the sample closest to parameter `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let i = ((t - self.t0) / self.step).round();
        if i < 0.0 || i as usize >= self.samples.len() {
            None
        } else {
            Some(i as usize)
        }
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.samples[i].x
    }

    pub fn last(&self) -> &PhasePoint {
        self.samples.last().expect("nonempty path")
    }

    /// `max |p(x(t), ξ(t)) − 1|` over the samples.
    pub fn max_drift(&self, patch: &MetricPatch) -> f64 {
        self.samples
            .iter()
            .map(|s| (patch.hamiltonian_sq_unchecked(&s.x, &s.xi).max(0.0).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Metric length between sample indices `a < b`, by the trapezoid rule on
    /// `sqrt(ẋᵀ g ẋ)` with `ẋ` from finite differences of the sampled positions.
    pub fn metric_length(&self, patch: &MetricPatch, a: usize, b: usize) -> f64 {
        assert!(a < b && b < self.samples.len() && self.samples.len() >= 3);
        let n = self.dim();
        let speed = |i: usize| -> f64 {
            let last = self.samples.len() - 1;
            let mut v = vec![0.0; n];
            for k in 0..n {
                let x = |j: usize| self.samples[j].x[k];
                v[k] = if i == 0 {
                    (-3.0 * x(0) + 4.0 * x(1) - x(2)) / (2.0 * self.step)
                } else if i == last {
                    (3.0 * x(last) - 4.0 * x(last - 1) + x(last - 2)) / (2.0 * self.step)
                } else {
                    (x(i + 1) - x(i - 1)) / (2.0 * self.step)
                };
            }
            patch.metric_norm_sq_unchecked(&self.samples[i].x, &v).sqrt()
        };
        let mut total = 0.0;
        let mut prev = speed(a);
        for i in a + 1..=b {
            let cur = speed(i);
            total += 0.5 * (prev + cur) * self.step;
            prev = cur;
        }
        total
    }
}

/// Scratch space for the RK4 integrator of Hamilton's equations with
/// Hamiltonian `p(x, ξ)`.
pub(crate) struct HamiltonStepper<'a> {
    patch: &'a MetricPatch,
    n: usize,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> HamiltonStepper<'a> {
    pub(crate) fn new(patch: &'a MetricPatch) -> Self {
        let n = patch.dim();
        HamiltonStepper {
            patch,
            n,
            k: [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]],
            tmp: vec![0.0; 2 * n],
        }
    }

    /// `(dx/dt, dξ/dt) = (∂p/∂ξ, −∂p/∂x)`; only the coupling coordinate of
    /// `∂p/∂x` is nonzero.
    #[inline]
    fn rhs(patch: &MetricPatch, n: usize, state: &[f64], out: &mut [f64]) {
        let (x, xi) = state.split_at(n);
        let alpha = patch.alpha_at(x);
        let q = xi.iter().map(|v| v * v).sum::<f64>() + 2.0 * alpha * patch.pair_product(xi);
        let p = q.max(1e-300).sqrt();
        let (dx, dxi) = out.split_at_mut(n);
        patch.raise(alpha, xi, dx);
        for v in dx.iter_mut() {
            *v /= p;
        }
        dxi.iter_mut().for_each(|v| *v = 0.0);
        if let Some(m) = patch.coupling_index() {
            let ap = patch.alpha_prime_at(x);
            if ap != 0.0 {
                dxi[m] = -ap * patch.pair_product(xi) / p;
            }
        }
    }

    /// One classical RK4 step of size `h` (may be negative), in place.
    pub(crate) fn step(&mut self, state: &mut [f64], h: f64) {
        let n = self.n;
        let patch = self.patch;
        Self::rhs(patch, n, state, &mut self.k[0]);
        for i in 0..2 * n {
            self.tmp[i] = state[i] + 0.5 * h * self.k[0][i];
        }
        Self::rhs(patch, n, &self.tmp, &mut self.k[1]);
        for i in 0..2 * n {
            self.tmp[i] = state[i] + 0.5 * h * self.k[1][i];
        }
        Self::rhs(patch, n, &self.tmp, &mut self.k[2]);
        for i in 0..2 * n {
            self.tmp[i] = state[i] + h * self.k[2][i];
        }
        Self::rhs(patch, n, &self.tmp, &mut self.k[3]);
        for i in 0..2 * n {
            state[i] += h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }
}

struct HalfFlow {
    samples: Vec<PhasePoint>,
    exit_t: Option<f64>,
}

fn integrate_half(
    patch: &MetricPatch,
    start: &PhasePoint,
    steps: usize,
    h: f64,
) -> Result<HalfFlow> {
    let n = patch.dim();
    let mut stepper = HamiltonStepper::new(patch);
    let mut state: Vec<f64> = start.x.iter().chain(&start.xi).copied().collect();
    let mut samples = Vec::with_capacity(steps);
    for i in 1..=steps {
        stepper.step(&mut state, h);
        let x = &state[..n];
        if !patch.in_domain(x) {
            return Ok(HalfFlow {
                samples,
                exit_t: Some(i as f64 * h),
            });
        }
        let drift = (patch.hamiltonian_sq_unchecked(x, &state[n..]).max(0.0).sqrt() - 1.0).abs();
        if drift > INSTABILITY_DRIFT {
            return Err(LabError::Instability { drift });
        }
        samples.push(PhasePoint::new(x.to_vec(), state[n..].to_vec()));
    }
    Ok(HalfFlow { samples, exit_t: None })
}

/// Integrates the unit-speed geodesic through `start` (taken at parameter 0)
/// over `span = (a, b)` with `a ≤ 0 ≤ b`. Samples sit on the lattice
/// `step·ℤ ∩ [a, b]`.
pub fn flow(patch: &MetricPatch, start: &PhasePoint, span: (f64, f64), step: f64) -> Result<GeodesicPath> {
    let (a, b) = span;
    if !(a <= 0.0 && b >= 0.0) {
        return Err(LabError::domain("flow span must contain 0"));
    }
    if !(step > 0.0) {
        return Err(LabError::domain("step must be positive"));
    }
    patch.check_domain(&start.x)?;
    let p = patch.hamiltonian(&start.x, &start.xi)?;
    if (p - 1.0).abs() > COSPHERE_TOL {
        return Err(LabError::domain(format!("start covector has p = {p}, expected 1")));
    }
    let forward_steps = (b / step + 1e-9).floor() as usize;
    let backward_steps = (-a / step + 1e-9).floor() as usize;
    let fwd = integrate_half(patch, start, forward_steps, step)?;
    let bwd = integrate_half(patch, start, backward_steps, -step)?;

    let t0 = -(bwd.samples.len() as f64) * step;
    let mut samples = Vec::with_capacity(bwd.samples.len() + 1 + fwd.samples.len());
    samples.extend(bwd.samples.into_iter().rev());
    samples.push(start.clone());
    samples.extend(fwd.samples);
    let path = GeodesicPath { t0, step, samples };
    match fwd.exit_t.or(bwd.exit_t) {
        Some(exit_t) => Err(LabError::LeftBox {
            exit_t,
            partial: Box::new(path),
        }),
        None => Ok(path),
    }
}

/// Fan parameters: free base coordinates and direction parameters.
///
/// * `three_d`: `base = [x1]`, `theta = [θ]` with `|θ| < π/2`.
/// * `odd_focus`: `base` has `(n−1)/2` entries, `theta` has `(n−1)/2` entries with `|θ|² < 1/2`.
/// * `even_focus`: `base` has `n/2` entries (the last is the untouched
///   coordinate), `theta` has `(n−2)/2` entries with `|θ| < 1/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanParams {
    pub family: Family,
    pub base: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FanParams {
    pub fn new(family: Family, base: Vec<f64>, theta: Vec<f64>) -> Self {
        FanParams { family, base, theta }
    }

    pub fn validate(&self, patch: &MetricPatch) -> Result<()> {
        let n = patch.dim();
        if self.family != patch.family() {
            return Err(LabError::domain("fan family does not match patch family"));
        }
        let (nb, nt) = fan_shape(self.family, n)?;
        if self.base.len() != nb || self.theta.len() != nt {
            return Err(LabError::domain(format!(
                "fan for {} in dimension {n} needs {nb} base and {nt} direction parameters",
                self.family.name()
            )));
        }
        let norm_sq: f64 = self.theta.iter().map(|t| t * t).sum();
        let ok = match self.family {
            Family::ThreeD => self.theta[0].abs() < std::f64::consts::FRAC_PI_2,
            Family::OddFocus => norm_sq < 0.5,
            Family::EvenFocus => norm_sq < 0.25,
            Family::Euclidean => false,
        };
        if !ok {
            return Err(LabError::domain(format!("fan direction {:?} out of range", self.theta)));
        }
        Ok(())
    }

    fn flat_params(&self) -> Vec<f64> {
        self.base.iter().chain(&self.theta).copied().collect()
    }

    fn from_flat(family: Family, nb: usize, v: &[f64]) -> Self {
        FanParams {
            family,
            base: v[..nb].to_vec(),
            theta: v[nb..].to_vec(),
        }
    }
}

/// (#base, #theta) for a family in dimension `n`.
pub fn fan_shape(family: Family, n: usize) -> Result<(usize, usize)> {
    match family {
        Family::ThreeD => Ok((1, 1)),
        Family::OddFocus => Ok(((n - 1) / 2, (n - 1) / 2)),
        Family::EvenFocus => Ok((n / 2, (n - 2) / 2)),
        Family::Euclidean => Err(LabError::domain("the Euclidean family has no geodesic fan")),
    }
}

/// `(cosine-like factor s, tan-like scale)` such that the coupling
/// coordinate equals `t·s`.
fn fan_speed(fan: &FanParams) -> f64 {
    match fan.family {
        Family::ThreeD => fan.theta[0].cos(),
        _ => (1.0 - fan.theta.iter().map(|t| t * t).sum::<f64>()).sqrt(),
    }
}

pub(crate) fn fan_point_unchecked(patch: &MetricPatch, fan: &FanParams, t: f64, out: &mut [f64]) {
    let n = patch.dim();
    let alpha = patch.alpha();
    match fan.family {
        Family::ThreeD => {
            let (s, c) = fan.theta[0].sin_cos();
            out[0] = fan.base[0] + t * s;
            out[1] = t * c;
            out[2] = s * alpha.primitive(t * c) / c;
        }
        Family::OddFocus | Family::EvenFocus => {
            let s = fan_speed(fan);
            let q = fan.theta.len();
            for i in 0..q {
                out[i] = fan.base[i] + t * fan.theta[i];
            }
            if fan.family == Family::EvenFocus {
                out[q] = fan.base[q];
            }
            let m = patch.coupling_index().expect("fan family has a coupling index");
            out[m] = t * s;
            let scale = alpha.primitive(t * s) / s;
            for i in 0..q {
                out[n - 1 - i] = fan.theta[i] * scale;
            }
        }
        Family::Euclidean => unreachable!("validated"),
    }
}

/// Evaluates the closed-form fan geodesic at arclength `t`.
pub fn closed_form_fan(patch: &MetricPatch, fan: &FanParams, t: f64) -> Result<Vec<f64>> {
    fan.validate(patch)?;
    let mut out = vec![0.0; patch.dim()];
    fan_point_unchecked(patch, fan, t, &mut out);
    patch.check_domain(&out)?;
    Ok(out)
}

/// Covector along the fan geodesic; it is constant in `t`.
pub fn fan_covector(patch: &MetricPatch, fan: &FanParams) -> Result<Vec<f64>> {
    fan.validate(patch)?;
    let n = patch.dim();
    let mut xi = vec![0.0; n];
    match fan.family {
        Family::ThreeD => {
            let (s, c) = fan.theta[0].sin_cos();
            xi[0] = s;
            xi[1] = c;
        }
        _ => {
            for (i, &th) in fan.theta.iter().enumerate() {
                xi[i] = th;
            }
            let m = patch.coupling_index().expect("fan family");
            xi[m] = fan_speed(fan);
        }
    }
    Ok(xi)
}

/// Samples the closed-form fan on `step·ℤ ∩ [a, b]`.
pub fn fan_path(patch: &MetricPatch, fan: &FanParams, span: (f64, f64), step: f64) -> Result<GeodesicPath> {
    let xi = fan_covector(patch, fan)?;
    let (a, b) = span;
    if !(a < b) || !(step > 0.0) {
        return Err(LabError::domain("fan_path needs a < b and a positive step"));
    }
    let k0 = (a / step - 1e-9).ceil() as i64;
    let k1 = (b / step + 1e-9).floor() as i64;
    let mut samples = Vec::with_capacity((k1 - k0 + 1).max(0) as usize);
    for k in k0..=k1 {
        let mut x = vec![0.0; patch.dim()];
        fan_point_unchecked(patch, fan, k as f64 * step, &mut x);
        patch.check_domain(&x)?;
        samples.push(PhasePoint::new(x, xi.clone()));
    }
    Ok(GeodesicPath {
        t0: k0 as f64 * step,
        step,
        samples,
    })
}

/// Samples the closed-form fan at `t_start + i·step`, `i = 0..=round(length/step)`.
pub fn fan_segment(
    patch: &MetricPatch,
    fan: &FanParams,
    t_start: f64,
    length: f64,
    step: f64,
) -> Result<GeodesicPath> {
    let xi = fan_covector(patch, fan)?;
    if !(length > 0.0) || !(step > 0.0) {
        return Err(LabError::domain("fan_segment needs a positive length and step"));
    }
    let count = (length / step).round() as usize;
    let mut samples = Vec::with_capacity(count + 1);
    for i in 0..=count {
        let mut x = vec![0.0; patch.dim()];
        fan_point_unchecked(patch, fan, t_start + i as f64 * step, &mut x);
        patch.check_domain(&x)?;
        samples.push(PhasePoint::new(x, xi.clone()));
    }
    Ok(GeodesicPath {
        t0: t_start,
        step,
        samples,
    })
}

/// Arclength at which the fan passes through the coupling-coordinate value of `x`.
pub fn fan_parameter_at(patch: &MetricPatch, fan: &FanParams, x: &[f64]) -> Result<f64> {
    fan.validate(patch)?;
    let m = patch.coupling_index().expect("fan family");
    let t = x[m] / fan_speed(fan);
    let mut y = vec![0.0; patch.dim()];
    fan_point_unchecked(patch, fan, t, &mut y);
    let gap = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if gap > 1e-9 {
        return Err(LabError::domain(format!("fan does not pass through {x:?} (gap {gap:e})")));
    }
    Ok(t)
}

/// Derivative matrix of `(base, θ, t) ↦ closed_form_fan` by central differences.
pub fn fan_derivative(patch: &MetricPatch, fan: &FanParams, t: f64, h: f64) -> Result<DMatrix<f64>> {
    fan.validate(patch)?;
    let n = patch.dim();
    let params = fan.flat_params();
    let nb = fan.base.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for col in 0..n {
        if col < params.len() {
            let mut pp = params.clone();
            pp[col] += h;
            let mut pm = params.clone();
            pm[col] -= h;
            fan_point_unchecked(patch, &FanParams::from_flat(fan.family, nb, &pp), t, &mut plus);
            fan_point_unchecked(patch, &FanParams::from_flat(fan.family, nb, &pm), t, &mut minus);
        } else {
            fan_point_unchecked(patch, fan, t + h, &mut plus);
            fan_point_unchecked(patch, fan, t - h, &mut minus);
        }
        for row in 0..n {
            jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `|det D(base, θ, t) fan|`.
pub fn fan_jacobian(patch: &MetricPatch, fan: &FanParams, t: f64) -> Result<f64> {
    Ok(fan_derivative(patch, fan, t, JACOBIAN_STEP)?.determinant().abs())
}

/// Finds the fan parameters and arclength whose fan point is `x`.
///
/// The fan is solved in closed form: the coupling coordinate fixes
/// `α^{(-1)}`, the trailing coordinates then fix the direction, and the base
/// follows. Fails where the fan is degenerate (`α^{(-1)} = 0` with nonzero
/// trailing coordinates).
pub fn invert_fan(patch: &MetricPatch, x: &[f64]) -> Result<(FanParams, f64)> {
    patch.check_domain(x)?;
    let n = patch.dim();
    let family = patch.family();
    let (nb, nt) = fan_shape(family, n)?;
    let m = patch.coupling_index().expect("fan family");
    let prim = patch.alpha().primitive(x[m]);
    // trailing coordinate paired with direction i
    let tail: Vec<f64> = match family {
        Family::ThreeD => vec![x[2]],
        _ => (0..nt).map(|i| x[n - 1 - i]).collect(),
    };
    let tail_norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = if prim == 0.0 {
        if tail_norm > 0.0 {
            return Err(LabError::domain(format!("fan is degenerate at {x:?}")));
        }
        vec![0.0; nt]
    } else {
        tail.iter().map(|v| v / prim).collect()
    };
    let fan = match family {
        Family::ThreeD => {
            let theta = u[0].atan();
            let t = x[1] / theta.cos();
            let base = x[0] - t * theta.sin();
            let fan = FanParams::new(family, vec![base], vec![theta]);
            fan.validate(patch)?;
            return Ok((fan, t));
        }
        _ => {
            let u2: f64 = u.iter().map(|v| v * v).sum();
            let s = 1.0 / (1.0 + u2).sqrt();
            let theta: Vec<f64> = u.iter().map(|v| v * s).collect();
            let t = x[m] / s;
            let mut base: Vec<f64> = (0..nt).map(|i| x[i] - t * theta[i]).collect();
            if family == Family::EvenFocus {
                base.push(x[nt]);
            }
            debug_assert_eq!(base.len(), nb);
            (FanParams::new(family, base, theta), t)
        }
    };
    fan.0.validate(patch)?;
    Ok(fan)
}

/// Worst disagreement between the integrated flow and the closed-form fan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanAgreement {
    pub span: (f64, f64),
    pub max_deviation: f64,
    pub max_drift: f64,
}

/// Largest sub-interval of `span` around `t = 0` on which the fan stays in
/// the domain, shrunk by `margin` at each clipped end.
pub fn admissible_span(patch: &MetricPatch, fan: &FanParams, span: (f64, f64), step: f64, margin: f64) -> Result<(f64, f64)> {
    fan.validate(patch)?;
    let mut x = vec![0.0; patch.dim()];
    fan_point_unchecked(patch, fan, 0.0, &mut x);
    patch.check_domain(&x)?;
    let mut reach = |limit: f64, dir: f64| {
        let steps = (limit.abs() / step).floor() as usize;
        for i in 1..=steps {
            fan_point_unchecked(patch, fan, dir * i as f64 * step, &mut x);
            if !patch.in_domain(&x) {
                return dir * ((i - 1) as f64 * step - margin).max(0.0);
            }
        }
        limit
    };
    Ok((reach(span.0.min(0.0), -1.0), reach(span.1.max(0.0), 1.0)))
}

/// Integrates from the fan's point at `t = 0` with its covector and compares
/// against the closed form at every sample over the admissible part of `span`.
pub fn fan_agreement(patch: &MetricPatch, fan: &FanParams, span: (f64, f64), step: f64) -> Result<FanAgreement> {
    let span = admissible_span(patch, fan, span, step, 0.02)?;
    let x0 = closed_form_fan(patch, fan, 0.0)?;
    let start = PhasePoint::new(x0, fan_covector(patch, fan)?);
    let path = flow(patch, &start, span, step)?;
    let mut expected = vec![0.0; patch.dim()];
    let mut max_deviation = 0.0f64;
    for i in 0..path.len() {
        fan_point_unchecked(patch, fan, path.t(i), &mut expected);
        let d = path
            .position(i)
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_deviation = max_deviation.max(d);
    }
    Ok(FanAgreement {
        span,
        max_deviation,
        max_drift: path.max_drift(patch),
    })
}

/// Uniformly drawn valid fan: base coordinates in `[-0.4, 0.4]` and
/// directions filling 80% of the family's admissible range.
pub fn random_fan<R: rand::Rng + ?Sized>(patch: &MetricPatch, rng: &mut R) -> Result<FanParams> {
    let family = patch.family();
    let (nb, nt) = fan_shape(family, patch.dim())?;
    let base: Vec<f64> = (0..nb).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let theta = match family {
        Family::ThreeD => vec![rng.gen_range(-1.2..1.2)],
        _ => {
            let radius = if family == Family::OddFocus { 0.8 * 0.5f64.sqrt() } else { 0.4 };
            loop {
                let v: Vec<f64> = (0..nt).map(|_| rng.gen_range(-radius..radius)).collect();
                if v.iter().map(|t| t * t).sum::<f64>() < radius * radius {
                    break v;
                }
            }
        }
    };
    Ok(FanParams::new(family, base, theta))
}
