//! Tube separation, bush counting and the Minkowski-dimension experiment.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distance::chart_distance;
use crate::error::{LabError, Result};
use crate::fit::{slope_fit, ScalingFit};
use crate::geodesic::{fan_parameter_at, fan_segment, flow, invert_fan, GeodesicPath, PhasePoint, DEFAULT_STEP};
use crate::metric::{Family, MetricPatch};
use crate::nikodym::Ball;
use crate::rng::{derive_seed, item_rng};
use crate::tube::{tube_average, Tube};

/// `min_{s1,s2} sqrt(|x1(s1) − x2(s2)|² + |ξ1(s1) − ξ2(s2)|²)` in chart coordinates.
pub fn cosphere_theta(g1: &GeodesicPath, g2: &GeodesicPath) -> Result<f64> {
    if (g1.step - g2.step).abs() > 1e-12 * g1.step.max(g2.step) {
        return Err(LabError::domain("cosphere_theta needs paths sampled at the same step"));
    }
    if g1.is_empty() || g2.is_empty() {
        return Err(LabError::domain("cosphere_theta needs nonempty paths"));
    }
    let mut best = f64::INFINITY;
    for a in &g1.samples {
        for b in &g2.samples {
            let mut d2 = 0.0;
            for i in 0..a.x.len() {
                let dx = a.x[i] - b.x[i];
                let dxi = a.xi[i] - b.xi[i];
                d2 += dx * dx + dxi * dxi;
                if d2 >= best {
                    break;
                }
            }
            best = best.min(d2);
        }
    }
    Ok(best.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpreadOutcome {
    pub theta: f64,
    /// `θ ≥ δ/(cλ)`.
    pub hypothesis: bool,
    /// No sampled point of `T1 ∩ T2` lies outside the chart ball `B(a, λ)`.
    pub disjoint_outside: bool,
}

/// Empirical check of the tube-separation estimate for one pair of geodesics.
/// Samples are split between both tubes.
#[allow(clippy::too_many_arguments)]
pub fn spread_check(
    g1: &GeodesicPath,
    g2: &GeodesicPath,
    a: &[f64],
    delta: f64,
    lambda: f64,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<SpreadOutcome> {
    let t1 = Tube::new(g1.clone(), delta)?;
    let t2 = Tube::new(g2.clone(), delta)?;
    spread_check_tubes(&t1, &t2, a, lambda, c, samples, seed)
}

pub(crate) fn spread_check_tubes(
    t1: &Tube,
    t2: &Tube,
    a: &[f64],
    lambda: f64,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<SpreadOutcome> {
    if !(t1.contains(a) && t2.contains(a)) {
        return Err(LabError::domain("spread_check needs a point in both tubes"));
    }
    if !(lambda > 0.0 && c > 0.0) {
        return Err(LabError::domain("spread_check needs positive lambda and c"));
    }
    let theta = cosphere_theta(t1.path(), t2.path())?;
    let hypothesis = theta >= t1.delta() / (c * lambda);
    let mut disjoint = true;
    for (k, (from, other)) in [(t1, t2), (t2, t1)].into_iter().enumerate() {
        let mut rng = item_rng(seed, k as u64);
        let (pts, _) = from.sample(&mut rng, samples.div_ceil(2));
        if pts.iter().any(|y| chart_distance(y, a) > lambda && other.contains(y)) {
            disjoint = false;
            break;
        }
    }
    Ok(SpreadOutcome {
        theta,
        hypothesis,
        disjoint_outside: disjoint,
    })
}

/// Greedy maximal `spacing`-separated subset, scanning `points` in order.
/// Returns indices into `points`.
pub fn greedy_separated(points: &[Vec<f64>], spacing: f64) -> Vec<usize> {
    let mut chosen = Vec::new();
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|v| (v / spacing).floor() as i64).collect() };
    for (i, p) in points.iter().enumerate() {
        let k = key(p);
        let d = k.len();
        let mut ok = true;
        let mut offset = vec![-1i64; d];
        'scan: loop {
            let cell: Vec<i64> = k.iter().zip(&offset).map(|(a, b)| a + b).collect();
            if let Some(list) = grid.get(&cell) {
                if list.iter().any(|&j| chart_distance(&points[j], p) < spacing) {
                    ok = false;
                    break 'scan;
                }
            }
            let mut t = 0;
            loop {
                if t == d {
                    break 'scan;
                }
                offset[t] += 1;
                if offset[t] <= 1 {
                    break;
                }
                offset[t] = -1;
                t += 1;
            }
        }
        if ok {
            grid.entry(k).or_default().push(i);
            chosen.push(i);
        }
    }
    chosen
}

/// Farthest-point sampling: starts from `points[0]` and keeps adding the
/// point farthest from the chosen set while that distance is at least
/// `spacing`. The result is `spacing`-separated and maximal.
pub fn farthest_point_separated(points: &[Vec<f64>], spacing: f64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut min_d: Vec<f64> = points.iter().map(|p| chart_distance(p, &points[0])).collect();
    loop {
        let (idx, &far) = min_d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap();
        if far < spacing {
            return chosen;
        }
        chosen.push(idx);
        let p = points[idx].clone();
        min_d
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, q)| *d = d.min(chart_distance(q, &p)));
    }
}

/// A separated set of base points with one tube per point.
#[derive(Clone, Debug)]
pub struct SeparatedFamily {
    pub centers: Vec<Vec<f64>>,
    pub spacing: f64,
    pub tubes: Vec<Tube>,
}

impl SeparatedFamily {
    pub fn is_separated(&self) -> bool {
        self.centers.iter().enumerate().all(|(i, a)| {
            self.centers[i + 1..].iter().all(|b| chart_distance(a, b) >= self.spacing)
        })
    }

    /// Every candidate lies within `spacing` of some center.
    pub fn is_maximal_in(&self, candidates: &[Vec<f64>]) -> bool {
        candidates
            .iter()
            .all(|p| self.centers.iter().any(|c| chart_distance(c, p) < self.spacing))
    }
}

/// A set given by its indicator and its Lebesgue measure.
#[derive(Clone)]
pub struct SampledSet {
    pub label: String,
    pub indicator: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    pub measure: f64,
}

impl std::fmt::Debug for SampledSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledSet")
            .field("label", &self.label)
            .field("measure", &self.measure)
            .finish()
    }
}

impl SampledSet {
    pub fn empty() -> Self {
        SampledSet {
            label: "empty".into(),
            indicator: Arc::new(|_| false),
            measure: 0.0,
        }
    }

    /// `{|x_axis| ≤ half_width}` inside the cube `[−1, 1]^n`.
    pub fn slab(n: usize, axis: usize, half_width: f64) -> Self {
        SampledSet {
            label: format!("slab_axis{axis}_w{half_width}"),
            indicator: Arc::new(move |x: &[f64]| x[axis].abs() <= half_width && x.iter().all(|v| v.abs() <= 1.0)),
            measure: 2.0 * half_width * 2f64.powi(n as i32 - 1),
        }
    }

    pub fn tube<R: Rng + ?Sized>(tube: Tube, rng: &mut R, samples: usize) -> Result<Self> {
        let measure = tube.measure(rng, samples)?;
        let t = Arc::new(tube);
        Ok(SampledSet {
            label: "tube".into(),
            indicator: Arc::new(move |x: &[f64]| t.contains(x)),
            measure,
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BushOptions {
    /// Half-width of the square of base points in the transverse hyperplane.
    pub half_width: f64,
    /// Base-point grid spacing as a multiple of δ.
    pub grid_factor: f64,
    /// Tilt of the non-vertical candidate directions.
    pub tilt: f64,
    /// Geodesic length; tubes are centered at their base point.
    pub r: f64,
    pub samples: usize,
    pub tip_samples: usize,
    pub max_pairs: usize,
}

impl Default for BushOptions {
    fn default() -> Self {
        BushOptions {
            half_width: 0.25,
            grid_factor: 1.0,
            tilt: 0.15,
            r: 0.5,
            samples: 400,
            tip_samples: 400,
            max_pairs: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BushReport {
    pub delta: f64,
    pub lambda: f64,
    pub a_const: f64,
    pub measure_e: f64,
    pub grid_points: usize,
    pub superlevel: usize,
    /// Cardinality of the maximal `Aδ/λ`-separated subset of the superlevel set.
    pub m: usize,
    /// `λ^{−2} δ^{−2(n−1)} |E|²`.
    pub bound_scale: f64,
    pub bush_point: Option<Vec<f64>>,
    /// Number of chosen tubes through the bush point.
    pub bush_multiplicity: usize,
    pub tip_pairs: usize,
    pub tip_disjoint_pairs: usize,
}

impl BushReport {
    pub fn ratio(&self) -> f64 {
        if self.bound_scale > 0.0 {
            self.m as f64 / self.bound_scale
        } else {
            0.0
        }
    }

    pub fn disjoint_rate(&self) -> f64 {
        if self.tip_pairs == 0 {
            1.0
        } else {
            self.tip_disjoint_pairs as f64 / self.tip_pairs as f64
        }
    }
}

/// Axis playing the role of the vertical direction: the coupling coordinate,
/// or the last coordinate for the Euclidean patch.
fn vertical_axis(patch: &MetricPatch) -> usize {
    patch.coupling_index().unwrap_or(patch.dim() - 1)
}

fn candidate_directions(n: usize, axis: usize, tilt: f64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    let mut v = vec![0.0; n];
    v[axis] = 1.0;
    dirs.push(v);
    for k in (0..n).filter(|&k| k != axis) {
        for s in [-1.0, 1.0] {
            let mut v = vec![0.0; n];
            v[axis] = 1.0;
            v[k] = s * tilt;
            let norm = (1.0 + tilt * tilt).sqrt();
            dirs.push(v.into_iter().map(|c| c / norm).collect());
        }
    }
    dirs
}

/// The restricted weak-type counting scheme as a simulation.
pub fn bush_experiment(
    patch: &MetricPatch,
    e: &SampledSet,
    delta: f64,
    lambda: f64,
    a_const: f64,
    opts: &BushOptions,
    seed: u64,
) -> Result<BushReport> {
    if !(delta > 0.0 && delta <= 1.0 && lambda > 0.0 && lambda <= 1.0) {
        return Err(LabError::domain("bush_experiment needs δ, λ in (0, 1]"));
    }
    let n = patch.dim();
    let axis = vertical_axis(patch);
    let n_side = ((2.0 * opts.half_width) / (opts.grid_factor * delta)).floor().max(1.0) as usize;
    let h = 2.0 * opts.half_width / n_side as f64;
    let mut bases = Vec::new();
    let mut idx = vec![0usize; n - 1];
    'grid: loop {
        let mut x = vec![0.0; n];
        let mut t = 0;
        for k in 0..n {
            if k != axis {
                x[k] = -opts.half_width + (idx[t] as f64 + 0.5) * h;
                t += 1;
            }
        }
        bases.push(x);
        let mut t = 0;
        loop {
            if t == n - 1 {
                break 'grid;
            }
            idx[t] += 1;
            if idx[t] < n_side {
                break;
            }
            idx[t] = 0;
            t += 1;
        }
    }
    let bound_scale = lambda.powi(-2) * delta.powi(-2 * (n as i32 - 1)) * e.measure * e.measure;
    let empty_report = |grid_points: usize| BushReport {
        delta,
        lambda,
        a_const,
        measure_e: e.measure,
        grid_points,
        superlevel: 0,
        m: 0,
        bound_scale,
        bush_point: None,
        bush_multiplicity: 0,
        tip_pairs: 0,
        tip_disjoint_pairs: 0,
    };
    if e.measure == 0.0 {
        return Ok(empty_report(bases.len()));
    }
    let dirs = candidate_directions(n, axis, opts.tilt);
    let indicator = |y: &[f64]| f64::from(e.contains(y));
    // discrete maximal function at each base point, keeping the best tube
    let evaluated: Vec<Result<Option<(f64, Tube)>>> = bases
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut best: Option<(f64, Tube)> = None;
            for (j, d) in dirs.iter().enumerate() {
                let start = PhasePoint::on_cosphere(patch, x.clone(), d.clone())?;
                let path = match flow(patch, &start, (-opts.r / 2.0, opts.r / 2.0), DEFAULT_STEP) {
                    Ok(p) => p,
                    Err(LabError::LeftBox { .. }) => continue,
                    Err(err) => return Err(err),
                };
                let tube = Tube::new(path, delta)?;
                let mut rng = item_rng(derive_seed(seed, i as u64), j as u64);
                let avg = tube_average(patch, &tube, &indicator, opts.samples, &mut rng)?;
                if best.as_ref().is_none_or(|(v, _)| avg.value > *v) {
                    best = Some((avg.value, tube));
                }
            }
            Ok(best)
        })
        .collect();
    let mut superlevel_pts = Vec::new();
    let mut superlevel_tubes = Vec::new();
    for (x, r) in bases.iter().zip(evaluated) {
        if let Some((v, tube)) = r? {
            if v > a_const * lambda {
                superlevel_pts.push(x.clone());
                superlevel_tubes.push(tube);
            }
        }
    }
    let mut report = empty_report(bases.len());
    report.superlevel = superlevel_pts.len();
    if superlevel_pts.is_empty() {
        return Ok(report);
    }
    let spacing = a_const * delta / lambda;
    let chosen = greedy_separated(&superlevel_pts, spacing);
    let family = SeparatedFamily {
        centers: chosen.iter().map(|&i| superlevel_pts[i].clone()).collect(),
        spacing,
        tubes: chosen.iter().map(|&i| superlevel_tubes[i].clone()).collect(),
    };
    report.m = family.centers.len();

    // bush point: the sampled point of E lying in the most chosen tubes
    let mut rng = item_rng(seed, u64::MAX);
    let mut best_a: Option<(Vec<f64>, Vec<usize>)> = None;
    for tube in &family.tubes {
        let (pts, _) = tube.sample(&mut rng, 16);
        for y in pts.into_iter().filter(|y| e.contains(y)) {
            let through: Vec<usize> = (0..family.tubes.len()).filter(|&k| family.tubes[k].contains(&y)).collect();
            if best_a.as_ref().is_none_or(|(_, b)| through.len() > b.len()) {
                best_a = Some((y, through));
            }
        }
    }
    if let Some((a, through)) = best_a {
        report.bush_multiplicity = through.len();
        let mut pairs = 0;
        let mut disjoint = 0;
        'pairs: for (i, &k1) in through.iter().enumerate() {
            for &k2 in &through[i + 1..] {
                if pairs >= opts.max_pairs {
                    break 'pairs;
                }
                pairs += 1;
                let out = spread_check_tubes(
                    &family.tubes[k1],
                    &family.tubes[k2],
                    &a,
                    lambda,
                    1.0,
                    opts.tip_samples,
                    derive_seed(seed, (k1 * family.tubes.len() + k2) as u64),
                )?;
                disjoint += usize::from(out.disjoint_outside);
            }
        }
        report.bush_point = Some(a);
        report.tip_pairs = pairs;
        report.tip_disjoint_pairs = disjoint;
    }
    Ok(report)
}

/// Random pair of geodesics through (or within δ/2 of) a common point, with
/// a prescribed lower bound on the angle between them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadTrial {
    pub delta: f64,
    pub lambda: f64,
    pub outcome: SpreadOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadTrialOptions {
    /// Geodesic length; paths are centered at their base points.
    pub r: f64,
    pub delta_range: (f64, f64),
    pub lambda_range: (f64, f64),
    /// Half-width of the cube of bush points `a`, around `center`.
    pub center: Vec<f64>,
    pub spread: f64,
    pub samples: usize,
}

impl SpreadTrialOptions {
    pub fn for_patch(patch: &MetricPatch) -> Self {
        let mut center = vec![0.0; patch.dim()];
        if let Some(m) = patch.coupling_index() {
            center[m] = -0.4;
        }
        SpreadTrialOptions {
            r: 0.6,
            delta_range: (0.005, 0.02),
            lambda_range: (0.08, 0.3),
            center,
            spread: 0.2,
            samples: 2000,
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// One randomized trial. The second direction is rotated from the first by
/// an angle drawn log-uniformly from `[angle_floor·δ/λ, 1.2]`.
pub fn spread_trial(patch: &MetricPatch, opts: &SpreadTrialOptions, c: f64, angle_floor: f64, seed: u64) -> Result<SpreadTrial> {
    let n = patch.dim();
    let mut rng = item_rng(seed, 0);
    let delta = opts.delta_range.0 * (opts.delta_range.1 / opts.delta_range.0).powf(rng.gen::<f64>());
    let lambda = opts.lambda_range.0 * (opts.lambda_range.1 / opts.lambda_range.0).powf(rng.gen::<f64>());
    let a: Vec<f64> = opts
        .center
        .iter()
        .map(|c| c + opts.spread * (2.0 * rng.gen::<f64>() - 1.0))
        .collect();
    let lo = (angle_floor * delta / lambda).max(1e-4);
    let angle = lo * (1.2f64 / lo).max(1.0).powf(rng.gen::<f64>());
    let d1 = unit_vector(&mut rng, n);
    let mut w = unit_vector(&mut rng, n);
    let dot: f64 = w.iter().zip(&d1).map(|(a, b)| a * b).sum();
    w.iter_mut().zip(&d1).for_each(|(wi, di)| *wi -= dot * di);
    let wn = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    let d2: Vec<f64> = d1
        .iter()
        .zip(&w)
        .map(|(a, b)| angle.cos() * a + angle.sin() * b / wn)
        .collect();
    // base points offset from a by less than δ/2
    let mut paths = Vec::with_capacity(2);
    for d in [d1, d2] {
        let off = unit_vector(&mut rng, n);
        let s = 0.5 * delta * rng.gen::<f64>();
        let base: Vec<f64> = a.iter().zip(&off).map(|(x, o)| x + s * o).collect();
        let start = PhasePoint::on_cosphere(patch, base, d)?;
        paths.push(flow(patch, &start, (-opts.r / 2.0, opts.r / 2.0), DEFAULT_STEP)?);
    }
    let outcome = spread_check(&paths[0], &paths[1], &a, delta, lambda, c, opts.samples, derive_seed(seed, 1))?;
    Ok(SpreadTrial { delta, lambda, outcome })
}

/// Largest `c` for which no Euclidean trial violates the separation estimate, times `safety`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadCalibration {
    pub c: f64,
    pub trials: usize,
    pub violations: usize,
    pub safety: f64,
}

pub fn calibrate_spread_constant(n: usize, trials: usize, safety: f64, seed: u64) -> Result<SpreadCalibration> {
    let patch = MetricPatch::euclidean(n)?;
    let opts = SpreadTrialOptions::for_patch(&patch);
    let results: Vec<Result<SpreadTrial>> = (0..trials)
        .into_par_iter()
        .map(|i| spread_trial(&patch, &opts, 1.0, 0.1, derive_seed(seed, i as u64)))
        .collect();
    let mut c_max = f64::INFINITY;
    let mut violations = 0;
    for r in results {
        let t = r?;
        if !t.outcome.disjoint_outside {
            violations += 1;
            c_max = c_max.min(t.delta / (t.lambda * t.outcome.theta));
        }
    }
    if !c_max.is_finite() {
        return Err(LabError::domain("calibration produced no overlapping trials; widen the angle range"));
    }
    Ok(SpreadCalibration {
        c: safety * c_max,
        trials,
        violations,
        safety,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadSummary {
    pub c: f64,
    pub trials: usize,
    pub disjoint: usize,
}

impl SpreadSummary {
    pub fn pass_rate(&self) -> f64 {
        self.disjoint as f64 / self.trials.max(1) as f64
    }
}

/// Curved trials restricted to pairs meeting the separation hypothesis.
pub fn spread_trials(patch: &MetricPatch, c: f64, trials: usize, seed: u64) -> Result<SpreadSummary> {
    let opts = SpreadTrialOptions::for_patch(patch);
    let results: Vec<Result<Option<bool>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..20u64 {
                let s = derive_seed(derive_seed(seed, i as u64), attempt);
                let t = spread_trial(patch, &opts, c, 1.0 / c, s);
                let t = match t {
                    Ok(t) => t,
                    Err(LabError::LeftBox { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if t.outcome.hypothesis {
                    return Ok(Some(t.outcome.disjoint_outside));
                }
            }
            Ok(None)
        })
        .collect();
    let mut done = 0;
    let mut disjoint = 0;
    for r in results {
        if let Some(ok) = r? {
            done += 1;
            disjoint += usize::from(ok);
        }
    }
    Ok(SpreadSummary {
        c,
        trials: done,
        disjoint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionReport {
    pub fit: ScalingFit,
    /// Shortest in-plane witness segment over the ball grid.
    pub min_intersection: f64,
    pub grid_points: usize,
}

/// `Π = {x_j = 0 for j past the focusing index} ∩ {|x| ≤ ρ}` for odd `n`.
///
/// (i) Every grid point of `ball` must have a fan witness meeting `Π` in a
/// segment of positive length. (ii) `|Π^δ|` is estimated by Monte Carlo in a
/// δ-scaled box around `Π` and its δ-slope fitted against `(n−1)/2`.
#[allow(clippy::too_many_arguments)]
pub fn dimension_experiment(
    patch: &MetricPatch,
    ball: &Ball,
    rho: f64,
    deltas: &[f64],
    r: f64,
    grid: usize,
    samples: usize,
    seed: u64,
) -> Result<DimensionReport> {
    let n = patch.dim();
    if n % 2 == 0 || !matches!(patch.family(), Family::ThreeD | Family::OddFocus) {
        return Err(LabError::domain("dimension_experiment needs an odd-dimensional focusing patch"));
    }
    let k = n.div_ceil(2);
    let (points, _) = ball.grid(grid);
    let step = DEFAULT_STEP;
    let mut min_len = f64::INFINITY;
    for x in &points {
        let (fan, _) = invert_fan(patch, x)?;
        let t = fan_parameter_at(patch, &fan, x)?;
        let path = fan_segment(patch, &fan, t, r, step)?;
        let in_plane = path
            .samples
            .iter()
            .filter(|s| s.x[k..].iter().all(|v| *v == 0.0) && s.x.iter().map(|v| v * v).sum::<f64>() <= rho * rho)
            .count();
        let len = in_plane.saturating_sub(1) as f64 * step;
        if len <= 0.0 {
            return Err(LabError::CounterexampleViolation { point: x.clone() });
        }
        min_len = min_len.min(len);
    }

    let volumes: Vec<(f64, f64)> = deltas
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let mut rng = item_rng(seed, i as u64);
            let head = rho + delta;
            let box_vol = (2.0 * head).powi(k as i32) * (2.0 * delta).powi((n - k) as i32);
            let mut hits = 0usize;
            let mut y = vec![0.0; n];
            for _ in 0..samples {
                for (j, v) in y.iter_mut().enumerate() {
                    let w = if j < k { head } else { delta };
                    *v = w * (2.0 * rng.gen::<f64>() - 1.0);
                }
                let head_norm = y[..k].iter().map(|v| v * v).sum::<f64>().sqrt();
                let tail2: f64 = y[k..].iter().map(|v| v * v).sum();
                let excess = (head_norm - rho).max(0.0);
                if tail2 + excess * excess <= delta * delta {
                    hits += 1;
                }
            }
            (delta, box_vol * hits as f64 / samples as f64)
        })
        .collect();
    let fit = slope_fit(&volumes)?;
    let expected = (n as f64 - 1.0) / 2.0;
    let tol = if n == 3 { 0.05 } else { 0.1 };
    Ok(DimensionReport {
        fit: ScalingFit::assess(format!("dimension_n{n}"), fit, expected, tol),
        min_intersection: min_len,
        grid_points: points.len(),
    })
}
