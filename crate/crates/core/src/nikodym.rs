//! Nikodym maximal operator over geodesic tubes and the slab counterexamples.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fit::{slope_fit, ScalingFit};
use crate::geodesic::{
    fan_jacobian, fan_parameter_at, fan_segment, flow, invert_fan, FanParams, PhasePoint, DEFAULT_STEP,
};
use crate::metric::{AlphaProfile, Family, MetricPatch};
use crate::quadrature;
use crate::rng::{derive_seed, item_rng};
use crate::tube::{tube_average, unit_ball_volume, Tube};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabVariant {
    Sec2Flat,
    Sec2Monomial,
    Sec3Odd,
    Sec4Even,
}

impl SlabVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sec2_flat" => Some(SlabVariant::Sec2Flat),
            "sec2_monomial" => Some(SlabVariant::Sec2Monomial),
            "sec3_odd" => Some(SlabVariant::Sec3Odd),
            "sec4_even" => Some(SlabVariant::Sec4Even),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SlabVariant::Sec2Flat => "sec2_flat",
            SlabVariant::Sec2Monomial => "sec2_monomial",
            SlabVariant::Sec3Odd => "sec3_odd",
            SlabVariant::Sec4Even => "sec4_even",
        }
    }

    /// Number of leading coordinates in the thick part of the slab.
    fn head_dim(&self, n: usize) -> usize {
        match self {
            SlabVariant::Sec2Flat | SlabVariant::Sec2Monomial => 2,
            SlabVariant::Sec3Odd => n.div_ceil(2),
            SlabVariant::Sec4Even => (n + 2) / 2,
        }
    }
}

/// Indicator test functions `f_δ` of the counterexamples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabFunction {
    pub variant: SlabVariant,
    pub c: f64,
    pub delta: f64,
    /// Monomial order; only used by `Sec2Monomial`.
    pub k: u32,
    pub n: usize,
}

impl SlabFunction {
    pub fn new(variant: SlabVariant, n: usize, c: f64, delta: f64, k: u32) -> Result<Self> {
        let ok = match variant {
            SlabVariant::Sec2Flat | SlabVariant::Sec2Monomial => n == 3,
            SlabVariant::Sec3Odd => n >= 3 && n % 2 == 1,
            SlabVariant::Sec4Even => n >= 4 && n % 2 == 0,
        };
        if !ok {
            return Err(LabError::domain(format!("{} is not defined in dimension {n}", variant.name())));
        }
        if !(c > 0.0 && delta > 0.0) {
            return Err(LabError::domain("slab needs positive c and delta"));
        }
        if variant == SlabVariant::Sec2Monomial && k == 0 {
            return Err(LabError::domain("monomial slab needs k >= 1"));
        }
        Ok(SlabFunction { variant, c, delta, k, n })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let inside = match self.variant {
            SlabVariant::Sec2Flat => x[1] > 0.0 && x[0] * x[0] + x[1] * x[1] < self.c * self.c && x[2].abs() < self.delta,
            SlabVariant::Sec2Monomial => {
                let h = self.delta.powf(1.0 / (self.k + 1) as f64);
                x[1] >= 0.0 && x[1] <= h && x[0].abs() <= self.c && x[2].abs() <= self.delta
            }
            SlabVariant::Sec3Odd | SlabVariant::Sec4Even => {
                let d = self.variant.head_dim(self.n);
                x[..d].iter().map(|v| v * v).sum::<f64>() < self.c * self.c
                    && x[d..].iter().all(|v| v.abs() < self.delta)
            }
        };
        f64::from(inside)
    }

    /// `‖f_δ‖_{L^p(dV)}`. The density depends only on the coupling
    /// coordinate, which is the last head coordinate, so the norm reduces to
    /// a one-dimensional integral.
    pub fn lp_norm(&self, patch: &MetricPatch, p: f64) -> f64 {
        let rho = |s: f64| patch.volume_density_at_coupling(s);
        let tol = 1e-13;
        let mass = match self.variant {
            SlabVariant::Sec2Flat => {
                let c = self.c;
                2.0 * self.delta * quadrature::integrate(|s| 2.0 * (c * c - s * s).max(0.0).sqrt() * rho(s), 0.0, c, tol)
            }
            SlabVariant::Sec2Monomial => {
                let h = self.delta.powf(1.0 / (self.k + 1) as f64);
                2.0 * self.c * 2.0 * self.delta * quadrature::integrate(rho, 0.0, h, tol)
            }
            SlabVariant::Sec3Odd | SlabVariant::Sec4Even => {
                let d = self.variant.head_dim(self.n);
                let c = self.c;
                let section = unit_ball_volume(d - 1);
                let head = quadrature::integrate(
                    |s| section * (c * c - s * s).max(0.0).powf((d - 1) as f64 / 2.0) * rho(s),
                    -c,
                    c,
                    tol,
                );
                head * (2.0 * self.delta).powi((self.n - d) as i32)
            }
        };
        mass.powf(1.0 / p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    /// Midpoints of the `grid^n` cells of the bounding cube that lie in the
    /// ball, with the cell volume.
    pub fn grid(&self, grid: usize) -> (Vec<Vec<f64>>, f64) {
        let n = self.center.len();
        let h = 2.0 * self.radius / grid as f64;
        let mut points = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = (0..n)
                .map(|i| self.center[i] - self.radius + (idx[i] as f64 + 0.5) * h)
                .collect();
            let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= self.radius * self.radius * (1.0 + 1e-12) {
                points.push(x);
            }
            let mut k = 0;
            loop {
                if k == n {
                    return (points, h.powi(n as i32));
                }
                idx[k] += 1;
                if idx[k] < grid {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalOptions {
    /// Accepted Monte-Carlo samples per tube.
    pub samples: usize,
    /// Cap on the number of grid directions.
    pub max_directions: usize,
    pub step: f64,
}

impl Default for MaximalOptions {
    fn default() -> Self {
        MaximalOptions {
            samples: 40_000,
            max_directions: 16,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximalValue {
    pub value: f64,
    pub stderr: f64,
    pub from_witness: bool,
    /// Tubes evaluated.
    pub candidates: usize,
    /// Grid directions whose geodesic left the box.
    pub skipped: usize,
}

/// Number of directions for spacing `δ/2` on the unit sphere, capped.
pub fn direction_count(n: usize, delta: f64, cap: usize) -> usize {
    let sphere_area = n as f64 * unit_ball_volume(n);
    let full = (sphere_area / (delta / 2.0).powi(n as i32 - 1)).ceil() as usize;
    full.clamp(1, cap.max(1))
}

/// Chart-unit directions drawn deterministically from `seed`.
pub fn directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|j| {
            let mut rng = item_rng(seed, j as u64);
            loop {
                let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    return v.into_iter().map(|c| c / norm).collect();
                }
            }
        })
        .collect()
}

/// Lower bound for `M^δ f(x)`: the best density-weighted tube average over
/// a capped direction grid and, when given, the fan geodesic `witness`
/// through `x`. Tubes start at `x` and run forward for length `r`.
#[allow(clippy::too_many_arguments)]
pub fn maximal_at<F>(
    patch: &MetricPatch,
    x: &[f64],
    delta: f64,
    r: f64,
    f: &F,
    witness: Option<&FanParams>,
    opts: &MaximalOptions,
    seed: u64,
) -> Result<MaximalValue>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    patch.check_domain(x)?;
    if !(delta > 0.0 && r > 0.0) {
        return Err(LabError::domain("maximal_at needs positive delta and r"));
    }
    let n = patch.dim();
    let count = direction_count(n, delta, opts.max_directions);
    let mut best: Option<(f64, f64, bool)> = None;
    let mut candidates = 0;
    let mut skipped = 0;
    let dir_seed = derive_seed(seed, 0);
    for (j, d) in directions(n, count, dir_seed).into_iter().enumerate() {
        let start = PhasePoint::on_cosphere(patch, x.to_vec(), d)?;
        let path = match flow(patch, &start, (0.0, r), opts.step) {
            Ok(p) => p,
            Err(LabError::LeftBox { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let tube = Tube::new(path, delta)?;
        let mut rng = item_rng(seed, 1 + j as u64);
        let avg = tube_average(patch, &tube, f, opts.samples, &mut rng)?;
        candidates += 1;
        if best.is_none_or(|(v, _, _)| avg.value > v) {
            best = Some((avg.value, avg.stderr, false));
        }
    }
    if let Some(fan) = witness {
        let t = fan_parameter_at(patch, fan, x)?;
        let path = fan_segment(patch, fan, t, r, opts.step)?;
        let tube = Tube::new(path, delta)?;
        let mut rng = item_rng(seed, u64::MAX);
        let avg = tube_average(patch, &tube, f, opts.samples, &mut rng)?;
        candidates += 1;
        if best.is_none_or(|(v, _, _)| avg.value > v) {
            best = Some((avg.value, avg.stderr, true));
        }
    }
    let (value, stderr, from_witness) =
        best.ok_or_else(|| LabError::domain("every candidate geodesic through x leaves the box"))?;
    Ok(MaximalValue {
        value,
        stderr,
        from_witness,
        candidates,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioReport {
    pub delta: f64,
    pub ratio: f64,
    pub l1: f64,
    pub l1_stderr: f64,
    pub lp: f64,
    pub grid_points: usize,
    pub witness_wins: usize,
}

/// `‖M^δ f_δ‖_{L¹(B)} / ‖f_δ‖_{L^p}` with the ball norm by midpoint-grid
/// quadrature; every grid point gets its fan geodesic as witness.
#[allow(clippy::too_many_arguments)]
pub fn counterexample_ratio(
    patch: &MetricPatch,
    slab: &SlabFunction,
    p: f64,
    ball: &Ball,
    grid: usize,
    r: f64,
    opts: &MaximalOptions,
    seed: u64,
) -> Result<RatioReport> {
    if !(p > 1.0 && p <= slab.n as f64) {
        return Err(LabError::domain(format!("p must lie in (1, {}]", slab.n)));
    }
    let (points, cell) = ball.grid(grid);
    if points.is_empty() {
        return Err(LabError::domain("ball grid is empty"));
    }
    let f = |y: &[f64]| slab.eval(y);
    let values: Vec<Result<(f64, f64, bool)>> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (fan, _) = invert_fan(patch, x)?;
            let m = maximal_at(patch, x, slab.delta, r, &f, Some(&fan), opts, derive_seed(seed, i as u64))?;
            let w = cell * patch.volume_density_unchecked(x);
            Ok((w * m.value, w * m.stderr, m.from_witness))
        })
        .collect();
    let mut l1 = 0.0;
    let mut var = 0.0;
    let mut wins = 0;
    for v in values {
        let (a, s, w) = v?;
        l1 += a;
        var += s * s;
        wins += usize::from(w);
    }
    let lp = slab.lp_norm(patch, p);
    Ok(RatioReport {
        delta: slab.delta,
        ratio: l1 / lp,
        l1,
        l1_stderr: var.sqrt(),
        lp,
        grid_points: points.len(),
        witness_wins: wins,
    })
}

/// Geometry of one counterexample: patch, ball, slab size and tube length.
#[derive(Clone, Debug)]
pub struct CounterexampleSetup {
    pub variant: SlabVariant,
    pub patch: MetricPatch,
    pub ball: Ball,
    pub c: f64,
    pub r: f64,
    pub k: u32,
}

impl CounterexampleSetup {
    /// Ball centered on the coupling axis at depth `−3/4` (`−1/2` for the
    /// monomial profile), with radius a fifth of `|α^{(-1)}|` there so the
    /// witness fans keep `|θ| ≲ 0.2`.
    pub fn new(variant: SlabVariant, n: usize, k: u32) -> Result<Self> {
        let (family, alpha, depth, r) = match variant {
            SlabVariant::Sec2Flat => (Family::ThreeD, AlphaProfile::exp_flat(), -0.75, 1.1),
            SlabVariant::Sec2Monomial => (Family::ThreeD, AlphaProfile::monomial(k)?, -0.5, 1.2),
            SlabVariant::Sec3Odd => (Family::OddFocus, AlphaProfile::exp_flat(), -0.75, 1.1),
            SlabVariant::Sec4Even => (Family::EvenFocus, AlphaProfile::exp_flat(), -0.75, 1.1),
        };
        let family = if family == Family::OddFocus && n == 3 { Family::ThreeD } else { family };
        let patch = MetricPatch::new(family, n, alpha)?;
        let m = patch.coupling_index().expect("curved family");
        let mut center = vec![0.0; n];
        center[m] = depth;
        let radius = 0.2 * patch.alpha().primitive(depth).abs();
        let setup = CounterexampleSetup {
            variant,
            patch,
            ball: Ball { center, radius },
            c: 0.25,
            r,
            k,
        };
        setup.check_center()?;
        Ok(setup)
    }

    fn check_center(&self) -> Result<()> {
        let (fan, t) = invert_fan(&self.patch, &self.ball.center)?;
        let j = fan_jacobian(&self.patch, &fan, t)?;
        if !(j > 0.0) {
            return Err(LabError::domain("fan Jacobian vanishes at the ball center"));
        }
        Ok(())
    }

    pub fn slab(&self, delta: f64) -> Result<SlabFunction> {
        SlabFunction::new(self.variant, self.patch.dim(), self.c, delta, self.k)
    }

    pub fn expected_slope(&self, p: f64) -> f64 {
        let n = self.patch.dim() as f64;
        match self.variant {
            SlabVariant::Sec2Flat => -1.0 / p,
            SlabVariant::Sec2Monomial => {
                let k = self.k as f64;
                1.0 / (k + 1.0) - (k + 2.0) / ((k + 1.0) * p)
            }
            SlabVariant::Sec3Odd => -(n - 1.0) / (2.0 * p),
            SlabVariant::Sec4Even => -(n - 2.0) / (2.0 * p),
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self.variant {
            SlabVariant::Sec2Flat | SlabVariant::Sec2Monomial => 0.15,
            SlabVariant::Sec3Odd | SlabVariant::Sec4Even => 0.2,
        }
    }
}

/// Ratio at every δ and the fitted slope against the expected exponent.
pub fn counterexample_scaling(
    setup: &CounterexampleSetup,
    p: f64,
    deltas: &[f64],
    grid: usize,
    opts: &MaximalOptions,
    seed: u64,
) -> Result<(ScalingFit, Vec<RatioReport>)> {
    let mut reports = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let slab = setup.slab(delta)?;
        reports.push(counterexample_ratio(
            &setup.patch,
            &slab,
            p,
            &setup.ball,
            grid,
            setup.r,
            opts,
            derive_seed(seed, i as u64),
        )?);
    }
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.delta, r.ratio)).collect();
    let fit = slope_fit(&points)?;
    let name = format!("nikodym_{}_n{}_p{}", setup.variant.name(), setup.patch.dim(), p);
    Ok((
        ScalingFit::assess(name, fit, setup.expected_slope(p), setup.tolerance()),
        reports,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_indicators() {
        let s = SlabFunction::new(SlabVariant::Sec2Flat, 3, 0.25, 0.1, 0).unwrap();
        assert_eq!(s.eval(&[0.0, 0.1, 0.05]), 1.0);
        assert_eq!(s.eval(&[0.0, -0.1, 0.05]), 0.0);
        assert_eq!(s.eval(&[0.0, 0.1, 0.15]), 0.0);
        let m = SlabFunction::new(SlabVariant::Sec2Monomial, 3, 0.25, 0.001, 2).unwrap();
        assert_eq!(m.eval(&[0.2, 0.099, 0.0]), 1.0);
        assert_eq!(m.eval(&[0.2, 0.101, 0.0]), 0.0);
        let o = SlabFunction::new(SlabVariant::Sec3Odd, 5, 0.25, 0.01, 0).unwrap();
        assert_eq!(o.eval(&[0.1, 0.1, 0.1, 0.005, -0.005]), 1.0);
        assert_eq!(o.eval(&[0.1, 0.1, 0.1, 0.005, -0.02]), 0.0);
        let e = SlabFunction::new(SlabVariant::Sec4Even, 4, 0.25, 0.01, 0).unwrap();
        assert_eq!(e.eval(&[0.1, 0.1, 0.1, 0.005]), 1.0);
        assert!(SlabFunction::new(SlabVariant::Sec4Even, 5, 0.25, 0.01, 0).is_err());
    }

    #[test]
    fn flat_norms_have_closed_forms() {
        let patch = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        let s = SlabFunction::new(SlabVariant::Sec2Flat, 3, 0.25, 0.01, 0).unwrap();
        let exact = (std::f64::consts::PI * 0.25f64.powi(2) / 2.0 * 0.02).powf(0.5);
        assert!((s.lp_norm(&patch, 2.0) - exact).abs() < 1e-12);
    }

    #[test]
    fn ball_grid_counts() {
        let b = Ball { center: vec![0.0; 3], radius: 1.0 };
        assert_eq!(b.grid(3).0.len(), 19);
        let b5 = Ball { center: vec![0.0; 5], radius: 1.0 };
        assert_eq!(b5.grid(3).0.len(), 51);
    }

    #[test]
    fn constant_field_has_maximal_value_one() {
        let patch = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        let opts = MaximalOptions {
            samples: 200,
            max_directions: 4,
            ..Default::default()
        };
        let x = [0.0, -0.5, 0.0];
        let m = maximal_at(&patch, &x, 0.05, 0.5, &|_: &[f64]| 1.0, None, &opts, 1).unwrap();
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn expected_exponents() {
        let s = CounterexampleSetup::new(SlabVariant::Sec2Monomial, 3, 2).unwrap();
        assert!((s.expected_slope(3.0) + 1.0 / 9.0).abs() < 1e-15);
        let o = CounterexampleSetup::new(SlabVariant::Sec3Odd, 5, 0).unwrap();
        assert!((o.expected_slope(3.0) + 2.0 / 3.0).abs() < 1e-15);
        let e = CounterexampleSetup::new(SlabVariant::Sec4Even, 4, 0).unwrap();
        assert!((e.expected_slope(3.0) + 1.0 / 3.0).abs() < 1e-15);
    }
}
