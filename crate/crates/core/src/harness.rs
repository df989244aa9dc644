//! Experiment runner: configuration, execution, and result files.
//!
//! A run produces three artifacts in the output directory: `data.csv` with
//! one row per datapoint, `summary.json` with every fit and check, and (when
//! enabled) one SVG log-log plot per fit.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{
    bush_experiment, calibrate_spread_constant, cosphere_theta, dimension_experiment, spread_trials, BushOptions,
    SampledSet,
};
use crate::curvature::{curvature_component, DEFAULT_FD_STEP};
use crate::distance::{dist, dist_gradient};
use crate::error::{LabError, Result};
use crate::fit::{slope_fit, ScalingFit, Verdict};
use crate::geodesic::{
    closed_form_fan, fan_agreement, fan_jacobian, fan_path, fan_shape, flow, random_fan, FanParams, PhasePoint,
    DEFAULT_STEP,
};
use crate::metric::{AlphaProfile, Family, MetricPatch, ProfileKind};
use crate::nikodym::{counterexample_scaling, maximal_at, Ball, CounterexampleSetup, MaximalOptions, SlabVariant};
use crate::oscillatory::{
    adjoint_apply, chain_inequality_check, dual_tube_scaling, exponent_threshold, fit_square_function_exponents,
    nearest_to_center, oscillatory_patch, overlap_count, overlap_scaling, point_near_axis, square_function_norm,
    square_function_scaling, ChainExponents, ChainReport, CylinderField, CylinderFamily, DualTubeOptions, Threshold,
    LAMBDA_MAX,
};
use crate::rng::{derive_seed, item_rng};
use crate::tube::{tube_average, Tube};

/// Every public operation the `all` experiment is expected to exercise.
pub const OPERATIONS: [&str; 25] = [
    "cometric",
    "metric",
    "hamiltonian",
    "volume_density",
    "curvature_component",
    "flow",
    "closed_form_fan",
    "fan_jacobian",
    "dist",
    "dist_gradient",
    "tube_average",
    "maximal_at",
    "counterexample_ratio",
    "slope_fit",
    "cosphere_theta",
    "spread_check",
    "bush_experiment",
    "dimension_experiment",
    "adjoint_apply",
    "dual_tube_scaling",
    "overlap_count",
    "square_function_norm",
    "exponent_threshold",
    "chain_inequality_check",
    "run",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyGeodesics,
    Curvature,
    NikodymScaling,
    Bush,
    Dimension,
    Oscillatory,
    Thresholds,
    All,
}

impl Experiment {
    pub const SINGLE: [Experiment; 7] = [
        Experiment::VerifyGeodesics,
        Experiment::Curvature,
        Experiment::NikodymScaling,
        Experiment::Bush,
        Experiment::Dimension,
        Experiment::Oscillatory,
        Experiment::Thresholds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VerifyGeodesics => "verify-geodesics",
            Experiment::Curvature => "curvature",
            Experiment::NikodymScaling => "nikodym-scaling",
            Experiment::Bush => "bush",
            Experiment::Dimension => "dimension",
            Experiment::Oscillatory => "oscillatory",
            Experiment::Thresholds => "thresholds",
            Experiment::All => "all",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::SINGLE
            .iter()
            .chain(std::iter::once(&Experiment::All))
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| LabError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Configuration for one invocation. Ranges are `JMIN..JMAX` exponent
/// strings: `δ = 2^{−j}` and `λ = 2^{j}` for `j = JMIN..=JMAX`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub family: String,
    /// `exp_flat` or `monomial`.
    pub profile: String,
    pub k: u32,
    /// Slab variant for `nikodym-scaling`.
    pub variant: String,
    pub p: f64,
    /// Dual exponent `q'` for the square-function norm.
    pub q: f64,
    pub delta_range: String,
    pub lambda_range: String,
    pub seed: u64,
    /// Monte-Carlo samples per tube.
    pub samples: usize,
    pub out_dir: PathBuf,
    pub plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Thresholds,
            n: 3,
            family: "three_d".into(),
            profile: "exp_flat".into(),
            k: 1,
            variant: "sec2_flat".into(),
            p: 2.5,
            q: 1.5,
            delta_range: "3..7".into(),
            lambda_range: "6..12".into(),
            seed: 1,
            samples: 4000,
            out_dir: PathBuf::from("results"),
            plots: true,
        }
    }
}

/// Parses `JMIN..JMAX` into an increasing pair of integers.
pub fn parse_range(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| LabError::Config(format!("range `{s}` is not of the form JMIN..JMAX")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<i32>()
            .map_err(|_| LabError::Config(format!("range `{s}` has a non-integer bound `{t}`")))
    };
    let (lo, hi) = (parse(a)?, parse(b)?);
    if lo >= hi {
        return Err(LabError::Config(format!("range `{s}` must have JMIN < JMAX")));
    }
    Ok((lo, hi))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn family(&self) -> Result<Family> {
        Family::parse(&self.family).ok_or_else(|| LabError::Config(format!("unknown family `{}`", self.family)))
    }

    pub fn profile(&self) -> Result<AlphaProfile> {
        let kind = match self.profile.as_str() {
            "exp_flat" => ProfileKind::ExpFlat,
            "monomial" => ProfileKind::Monomial { k: self.k },
            other => return Err(LabError::Config(format!("unknown profile `{other}`"))),
        };
        AlphaProfile::from_kind(kind, None).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn patch(&self) -> Result<MetricPatch> {
        MetricPatch::new(self.family()?, self.n, self.profile()?).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn variant(&self) -> Result<SlabVariant> {
        SlabVariant::parse(&self.variant).ok_or_else(|| LabError::Config(format!("unknown slab variant `{}`", self.variant)))
    }

    /// Strictly decreasing widths `2^{−j}`.
    pub fn deltas(&self) -> Result<Vec<f64>> {
        let (lo, hi) = parse_range(&self.delta_range)?;
        Ok((lo..=hi).map(|j| 2f64.powi(-j)).collect())
    }

    /// Strictly increasing frequencies `2^{j}`.
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let (lo, hi) = parse_range(&self.lambda_range)?;
        Ok((lo..=hi).map(|j| 2f64.powi(j)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=7).contains(&self.n) {
            return Err(LabError::Config(format!("n must lie in 3..=7, got {}", self.n)));
        }
        self.family()?;
        self.profile()?;
        self.variant()?;
        if matches!(self.experiment, Experiment::VerifyGeodesics | Experiment::All) {
            self.patch()?;
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(LabError::Config(format!("p must exceed 1, got {}", self.p)));
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(LabError::Config(format!("q must lie in (1, 2], got {}", self.q)));
        }
        let (dlo, dhi) = parse_range(&self.delta_range)?;
        if dlo < 1 || dhi > 12 || dhi - dlo < 2 {
            return Err(LabError::Config("delta range needs 1 ≤ JMIN, JMAX ≤ 12 and at least 3 values".into()));
        }
        let (llo, lhi) = parse_range(&self.lambda_range)?;
        if llo < 0 || lhi > 14 || lhi - llo < 2 {
            return Err(LabError::Config("lambda range needs 0 ≤ JMIN, JMAX ≤ 14 and at least 3 values".into()));
        }
        if self.samples < 100 {
            return Err(LabError::Config(format!("samples must be at least 100, got {}", self.samples)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|value − expected| ≤ tolerance`.
    Within,
    AtMost,
    AtLeast,
}

/// A scalar check with its verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub experiment: String,
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub verdict: Verdict,
}

impl Check {
    fn new(experiment: &str, name: impl Into<String>, value: f64, expected: f64, tolerance: f64, relation: Relation) -> Self {
        let ok = match relation {
            Relation::Within => (value - expected).abs() <= tolerance,
            Relation::AtMost => value <= expected,
            Relation::AtLeast => value >= expected,
        };
        Check {
            experiment: experiment.into(),
            name: name.into(),
            value,
            expected,
            tolerance,
            relation,
            verdict: Verdict::from_bool(ok),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub n: usize,
    pub family: String,
    pub parameter: f64,
    pub value: f64,
    pub stderr: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub experiment: String,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub fits: Vec<ScalingFit>,
    pub checks: Vec<Check>,
    pub thresholds: Vec<Threshold>,
    pub chains: Vec<ChainReport>,
    pub errors: Vec<ErrorRecord>,
    /// Invocation count per operation.
    pub coverage: BTreeMap<String, usize>,
    pub passed: bool,
}

impl Summary {
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .fits
            .iter()
            .filter(|f| !f.verdict.passed())
            .map(|f| format!("fit {}", f.name))
            .collect();
        out.extend(self.checks.iter().filter(|c| !c.verdict.passed()).map(|c| format!("check {}", c.name)));
        out.extend(self.chains.iter().filter(|c| !c.verdict.passed()).map(|c| format!("chain n={}", c.n)));
        out.extend(self.errors.iter().map(|e| format!("error in {}: {}", e.experiment, e.message)));
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunResults {
    pub summary: Summary,
    pub rows: Vec<Row>,
}

/// Accumulates results while experiments run.
struct Recorder {
    rows: Vec<Row>,
    fits: Vec<ScalingFit>,
    checks: Vec<Check>,
    thresholds: Vec<Threshold>,
    chains: Vec<ChainReport>,
    coverage: BTreeMap<String, usize>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            rows: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            thresholds: Vec::new(),
            chains: Vec::new(),
            coverage: OPERATIONS.iter().map(|op| (op.to_string(), 0)).collect(),
        }
    }

    fn touch(&mut self, op: &str, times: usize) {
        *self.coverage.entry(op.to_string()).or_insert(0) += times;
    }

    #[allow(clippy::too_many_arguments)]
    fn row(&mut self, experiment: &str, n: usize, family: &str, parameter: f64, value: f64, stderr: f64, seed: u64) {
        self.rows.push(Row {
            experiment: experiment.into(),
            n,
            family: family.into(),
            parameter,
            value,
            stderr,
            seed,
        });
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn fit(&mut self, fit: ScalingFit) {
        self.touch("slope_fit", 1);
        self.fits.push(fit);
    }
}

/// Runs the configured experiment(s). Invalid configurations are rejected
/// with [`LabError::Config`]; failures inside an experiment are recorded in
/// the summary and make the run fail without aborting later experiments.
pub fn run(config: &ExperimentConfig) -> Result<RunResults> {
    config.validate()?;
    let mut rec = Recorder::new();
    rec.touch("run", 1);
    let list: Vec<Experiment> = match config.experiment {
        Experiment::All => Experiment::SINGLE.to_vec(),
        e => vec![e],
    };
    let mut errors = Vec::new();
    for exp in list {
        log::info!("running {exp}");
        let outcome = match exp {
            Experiment::VerifyGeodesics => verify_geodesics(config, &mut rec),
            Experiment::Curvature => curvature(config, &mut rec),
            Experiment::NikodymScaling => nikodym_scaling(config, &mut rec),
            Experiment::Bush => bush(config, &mut rec),
            Experiment::Dimension => dimension(config, &mut rec),
            Experiment::Oscillatory => oscillatory(config, &mut rec),
            Experiment::Thresholds => thresholds(config, &mut rec),
            Experiment::All => unreachable!("expanded above"),
        };
        if let Err(e) = outcome {
            log::warn!("{exp} failed: {e}");
            errors.push(ErrorRecord {
                experiment: exp.name().into(),
                kind: e.kind().into(),
                message: e.to_string(),
            });
        }
    }
    if config.experiment == Experiment::All {
        let missing = rec.coverage.values().filter(|&&v| v == 0).count();
        rec.check(Check::new("all", "uncovered_operations", missing as f64, 0.0, 0.0, Relation::AtMost));
    }
    let passed = errors.is_empty()
        && rec.fits.iter().all(|f| f.verdict.passed())
        && rec.checks.iter().all(|c| c.verdict.passed())
        && rec.chains.iter().all(|c| c.verdict.passed());
    Ok(RunResults {
        summary: Summary {
            config: config.clone(),
            fits: rec.fits,
            checks: rec.checks,
            thresholds: rec.thresholds,
            chains: rec.chains,
            errors,
            coverage: rec.coverage,
            passed,
        },
        rows: rec.rows,
    })
}

impl RunResults {
    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| LabError::Internal(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| LabError::Internal(e.to_string()))
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| LabError::Internal(e.to_string()))
    }

    /// Writes `data.csv`, `summary.json` and, if requested, `plots/*.svg`.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("data.csv"), self.csv_string()?)?;
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        if plots {
            let pdir = dir.join("plots");
            std::fs::create_dir_all(&pdir)?;
            for fit in &self.summary.fits {
                std::fs::write(pdir.join(format!("{}.svg", file_stem(&fit.name))), svg_plot(fit))?;
            }
        }
        Ok(())
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Log-log scatter of a fit's points with the fitted and expected lines.
pub fn svg_plot(fit: &ScalingFit) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let pts: Vec<(f64, f64)> = fit.points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len().max(1) as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (slope, color) in [(fit.slope, "steelblue"), (fit.expected_slope, "gray")] {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="{}"/>"#,
            px(x0),
            py(my + slope * (x0 - mx)),
            px(x1),
            py(my + slope * (x1 - mx)),
            if color == "gray" { "4 3" } else { "none" }
        );
    }
    for &(x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#, px(x), py(y));
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{:.0}" font-family="monospace" font-size="12">{} slope {:.4} (expected {:.4} ± {}) {:?}</text>"#,
        PAD - 12.0,
        fit.name,
        fit.slope,
        fit.expected_slope,
        fit.tolerance,
        fit.verdict
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{:.0}" font-family="monospace" font-size="11">log10 x in [{x0:.3}, {x1:.3}], log10 y in [{y0:.3}, {y1:.3}]</text>"#,
        H - 16.0
    );
    s.push_str("</svg>\n");
    s
}

/// Patch used by experiments that need a curved family of the configured
/// dimension.
fn focusing_patch(n: usize, profile: AlphaProfile) -> Result<MetricPatch> {
    match n {
        3 => MetricPatch::three_d(profile),
        n if n % 2 == 1 => MetricPatch::odd_focus(n, profile),
        n => MetricPatch::even_focus(n, profile),
    }
}

fn theta_count(patch: &MetricPatch) -> Result<usize> {
    Ok(fan_shape(patch.family(), patch.dim())?.1)
}

fn verify_geodesics(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::VerifyGeodesics.name();
    let patch = cfg.patch()?;
    let n = patch.dim();
    let label = patch.label();
    let seed = cfg.seed;
    let mut rng = item_rng(seed, 0);

    let mut inverse_err = 0.0f64;
    let mut density_err = 0.0f64;
    let mut cosphere_err = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let g = patch.metric(&x)?;
        let gi = patch.cometric(&x)?;
        let id = &g * &gi;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                inverse_err = inverse_err.max((id[(i, j)] - target).abs());
            }
        }
        let density = patch.volume_density(&x)?;
        density_err = density_err.max((density - g.determinant().sqrt()).abs() / density);
        let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = patch.hamiltonian(&x, &xi)?;
        let quad = (&gi * nalgebra::DVector::from_column_slice(&xi)).dot(&nalgebra::DVector::from_column_slice(&xi));
        cosphere_err = cosphere_err.max((p - quad.sqrt()).abs());
    }
    rec.touch("metric", 20);
    rec.touch("cometric", 20);
    rec.touch("volume_density", 20);
    rec.touch("hamiltonian", 20);
    rec.check(Check::new(exp, format!("metric_inverse_{label}"), inverse_err, 0.0, 1e-10, Relation::Within));
    rec.check(Check::new(exp, format!("volume_density_{label}"), density_err, 0.0, 1e-10, Relation::Within));
    rec.check(Check::new(exp, format!("hamiltonian_{label}"), cosphere_err, 0.0, 1e-12, Relation::Within));

    if patch.family() == Family::Euclidean {
        let mut xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        xi.iter_mut().for_each(|v| *v /= norm);
        let start = PhasePoint::new(vec![0.0; n], xi.clone());
        let path = flow(&patch, &start, (-0.5, 0.5), DEFAULT_STEP)?;
        rec.touch("flow", 1);
        let dev = (0..path.len())
            .map(|i| {
                let t = path.t(i);
                path.position(i).iter().zip(&xi).map(|(x, d)| (x - t * d).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        rec.check(Check::new(exp, "euclidean_straight_line", dev, 0.0, 1e-12, Relation::Within));
        return Ok(());
    }

    let trials = 50;
    let mut worst_dev = 0.0f64;
    let mut worst_drift = 0.0f64;
    for i in 0..trials {
        let fan = random_fan(&patch, &mut rng)?;
        let a = fan_agreement(&patch, &fan, (-1.0, 1.0), DEFAULT_STEP)?;
        rec.row(exp, n, &label, i as f64, a.max_deviation, a.max_drift, seed);
        worst_dev = worst_dev.max(a.max_deviation);
        worst_drift = worst_drift.max(a.max_drift);
    }
    rec.touch("flow", trials);
    rec.touch("closed_form_fan", trials);
    rec.check(Check::new(exp, format!("flow_vs_fan_{label}"), worst_dev, 0.0, 1e-6, Relation::Within));
    rec.check(Check::new(exp, format!("hamiltonian_drift_{label}"), worst_drift, 0.0, 1e-8, Relation::Within));

    let (nb, nt) = fan_shape(patch.family(), n)?;
    let vertical = FanParams::new(patch.family(), vec![0.0; nb], vec![0.0; nt]);
    let t = -0.5;
    let expected = patch.alpha().primitive(t).abs().powi(theta_count(&patch)? as i32);
    let jac = fan_jacobian(&patch, &vertical, t)?;
    rec.touch("fan_jacobian", 1);
    rec.check(Check::new(exp, format!("fan_jacobian_{label}"), (jac - expected).abs() / expected, 0.0, 1e-5, Relation::Within));

    let mut dist_err = 0.0f64;
    let mut eikonal_err = 0.0f64;
    for _ in 0..5 {
        let mut fan = random_fan(&patch, &mut rng)?;
        fan.theta.iter_mut().for_each(|t| *t *= 0.5);
        let a = closed_form_fan(&patch, &fan, -0.6)?;
        let b = closed_form_fan(&patch, &fan, -0.1)?;
        let shot = dist(&patch, &a, &b)?;
        dist_err = dist_err.max((shot.length - 0.5).abs());
        let grad = dist_gradient(&patch, &a, &b)?;
        let gi = patch.cometric(&a)?;
        let gv = nalgebra::DVector::from_column_slice(&grad);
        eikonal_err = eikonal_err.max(((&gi * &gv).dot(&gv) - 1.0).abs());
    }
    rec.touch("closed_form_fan", 10);
    rec.touch("dist", 5);
    rec.touch("dist_gradient", 5);
    rec.check(Check::new(exp, format!("fan_arclength_distance_{label}"), dist_err, 0.0, 1e-6, Relation::Within));
    rec.check(Check::new(exp, format!("eikonal_{label}"), eikonal_err, 0.0, 1e-4, Relation::Within));
    Ok(())
}

/// `R^3_{232}` (1-based) of the `three_d` metric with profile `s^k`.
pub fn r3232(k: u32, x2: f64) -> Result<f64> {
    let patch = MetricPatch::three_d(AlphaProfile::monomial(k)?)?;
    curvature_component(&patch, 2, [1, 2, 1], &[0.0, x2, 0.0], DEFAULT_FD_STEP)
}

/// Fitted vanishing order of `R^3_{232}` at `x₂ = 0` over `|x₂| = 2^{−j}`.
pub fn curvature_order_fit(k: u32, jmin: i32, jmax: i32) -> Result<ScalingFit> {
    let mut pts = Vec::new();
    for j in jmin..=jmax {
        let x2 = 2f64.powi(-j);
        pts.push((x2, r3232(k, x2)?.abs()));
    }
    ScalingFit::from_points(format!("curvature_order_k{k}"), &pts, 2.0 * k as f64 - 2.0, 0.1)
}

fn curvature(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::Curvature.name();
    let k = cfg.k;
    let family = format!("three_d_monomial_k{k}");
    for i in 0..=16 {
        let x2 = -0.4 + 0.05 * i as f64;
        rec.row(exp, 3, &family, x2, r3232(k, x2)?, 0.0, cfg.seed);
    }
    rec.touch("curvature_component", 17);
    if k == 1 {
        let r0 = r3232(1, 0.0)?;
        rec.touch("curvature_component", 1);
        rec.check(Check::new(exp, "r3232_k1_origin", r0, -0.75, 1e-4, Relation::Within));
    } else {
        let fit = curvature_order_fit(k, 3, 7)?;
        rec.touch("curvature_component", 5);
        for &(x, v) in &fit.points {
            rec.row(exp, 3, &format!("{family}_order"), x, v, 0.0, cfg.seed);
        }
        rec.fit(fit);
    }
    Ok(())
}

fn nikodym_scaling(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::NikodymScaling.name();
    let variant = cfg.variant()?;
    let setup = CounterexampleSetup::new(variant, cfg.n, cfg.k)?;
    let n = setup.patch.dim();
    let opts = MaximalOptions {
        samples: cfg.samples,
        max_directions: 8,
        ..Default::default()
    };

    // Normalization and witness sanity at the ball center.
    let x = setup.ball.center.clone();
    let (fan, _) = crate::geodesic::invert_fan(&setup.patch, &x)?;
    let t = crate::geodesic::fan_parameter_at(&setup.patch, &fan, &x)?;
    let path = fan_path(&setup.patch, &fan, (t, t + setup.r), DEFAULT_STEP)?;
    let tube = Tube::new(path, 0.05)?;
    let mut rng = item_rng(cfg.seed, 1);
    let one = tube_average(&setup.patch, &tube, &|_: &[f64]| 1.0, 500, &mut rng)?;
    rec.touch("tube_average", 1);
    rec.check(Check::new(exp, "tube_average_of_one", one.value, 1.0, 1e-12, Relation::Within));
    let slab = setup.slab(cfg.deltas()?[0])?;
    let m = maximal_at(&setup.patch, &x, slab.delta, setup.r, &|y: &[f64]| slab.eval(y), Some(&fan), &opts, cfg.seed)?;
    rec.touch("maximal_at", 1);
    rec.check(Check::new(exp, "witness_lower_bound", m.value, 0.0, 0.0, Relation::AtLeast));

    let deltas = cfg.deltas()?;
    let grid = 3;
    let (fit, reports) = counterexample_scaling(&setup, cfg.p, &deltas, grid, &opts, cfg.seed)?;
    let label = format!("{}_{}", variant.name(), setup.patch.label());
    for r in &reports {
        rec.touch("counterexample_ratio", 1);
        rec.touch("maximal_at", r.grid_points);
        rec.touch("tube_average", r.grid_points);
        rec.row(exp, n, &label, r.delta, r.ratio, r.l1_stderr / r.lp, cfg.seed);
    }
    rec.fit(fit);
    Ok(())
}

/// Outcome of the Euclidean calibration plus the curved trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BushRun {
    pub c: f64,
    pub spread_pass_rate: f64,
    pub spread_trials: usize,
    pub c_prime: f64,
    pub ratios: Vec<(f64, f64)>,
}

/// Calibrates `c` and `C′` on the Euclidean patch, then runs the spread and
/// bush trials on `curved` with those constants frozen.
pub fn bush_suite(curved: &MetricPatch, deltas: &[f64], trials: usize, seed: u64) -> Result<(BushRun, Vec<crate::combinatorics::BushReport>)> {
    let n = curved.dim();
    let cal = calibrate_spread_constant(n, 300, 0.8, derive_seed(seed, 0))?;
    let spread = spread_trials(curved, cal.c, trials, derive_seed(seed, 1))?;
    let euclid = MetricPatch::euclidean(n)?;
    let axis = curved.coupling_index().unwrap_or(n - 1);
    let other = if axis == 0 { 1 } else { 0 };
    let set = SampledSet::slab(n, other, 0.1);
    let opts = BushOptions::default();
    let lambda = 0.5;
    let mut c_prime = 0.0f64;
    for (i, &d) in deltas.iter().enumerate() {
        let r = bush_experiment(&euclid, &set, d, lambda, 1.0, &opts, derive_seed(seed, 10 + i as u64))?;
        c_prime = c_prime.max(2.0 * r.ratio());
    }
    let mut reports = Vec::new();
    let mut ratios = Vec::new();
    for (i, &d) in deltas.iter().enumerate() {
        let r = bush_experiment(curved, &set, d, lambda, 1.0, &opts, derive_seed(seed, 20 + i as u64))?;
        ratios.push((d, r.ratio()));
        reports.push(r);
    }
    Ok((
        BushRun {
            c: cal.c,
            spread_pass_rate: spread.pass_rate(),
            spread_trials: spread.trials,
            c_prime,
            ratios,
        },
        reports,
    ))
}

fn bush(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::Bush.name();
    let curved = focusing_patch(cfg.n, cfg.profile()?)?;
    let n = curved.dim();
    let label = curved.label();

    let mut rng = item_rng(cfg.seed, 2);
    let fan = random_fan(&curved, &mut rng)?;
    let path = fan_path(&curved, &fan, (-0.2, 0.2), DEFAULT_STEP)?;
    let theta = cosphere_theta(&path, &path)?;
    rec.touch("cosphere_theta", 1);
    rec.check(Check::new(exp, "cosphere_theta_identical", theta, 0.0, 0.0, Relation::Within));

    let deltas = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let trials = 1000;
    let (run, reports) = bush_suite(&curved, &deltas, trials, cfg.seed)?;
    rec.touch("spread_check", 300 + run.spread_trials);
    rec.touch("cosphere_theta", 300 + run.spread_trials);
    rec.touch("bush_experiment", 2 * deltas.len());
    rec.check(Check::new(exp, "spread_constant_c", run.c, 0.0, 0.0, Relation::AtLeast));
    rec.check(Check::new(exp, "spread_trials_completed", run.spread_trials as f64, 0.9 * trials as f64, 0.0, Relation::AtLeast));
    rec.check(Check::new(exp, format!("spread_pass_rate_{label}"), run.spread_pass_rate, 0.99, 0.0, Relation::AtLeast));
    for r in &reports {
        rec.row(exp, n, &label, r.delta, r.m as f64, 0.0, cfg.seed);
        rec.check(Check::new(
            exp,
            format!("bush_bound_delta_{}", r.delta),
            r.ratio(),
            run.c_prime,
            0.0,
            Relation::AtMost,
        ));
        rec.check(Check::new(exp, format!("tip_disjoint_rate_delta_{}", r.delta), r.disjoint_rate(), 0.99, 0.0, Relation::AtLeast));
    }
    let pts: Vec<(f64, f64)> = reports.iter().filter(|r| r.m > 0).map(|r| (r.delta, r.m as f64)).collect();
    if pts.len() >= 3 {
        let fit = slope_fit(&pts)?;
        rec.touch("slope_fit", 1);
        let floor = -2.0 * (n as f64 - 1.0) - 0.3;
        rec.check(Check::new(exp, "bush_count_slope", fit.slope, floor, 0.0, Relation::AtLeast));
    }
    Ok(())
}

/// Ball on the coupling axis used by the dimension experiment.
pub fn dimension_ball(patch: &MetricPatch) -> Ball {
    let mut center = vec![0.0; patch.dim()];
    if let Some(m) = patch.coupling_index() {
        center[m] = -0.75;
    }
    Ball { center, radius: 0.01 }
}

fn dimension(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::Dimension.name();
    if cfg.n % 2 == 0 {
        return Err(LabError::domain("the dimension experiment needs odd n"));
    }
    let patch = focusing_patch(cfg.n, AlphaProfile::exp_flat())?;
    let deltas: Vec<f64> = (6..=10).map(|j| 2f64.powi(-j)).collect();
    let rep = dimension_experiment(&patch, &dimension_ball(&patch), 0.5, &deltas, 1.1, 3, 20_000, cfg.seed)?;
    rec.touch("dimension_experiment", 1);
    rec.touch("closed_form_fan", rep.grid_points);
    for &(d, v) in &rep.fit.points {
        rec.row(exp, cfg.n, &patch.label(), d, v, 0.0, cfg.seed);
    }
    rec.check(Check::new(exp, "witness_intersection_length", rep.min_intersection, 0.1, 0.0, Relation::AtLeast));
    rec.fit(rep.fit);
    Ok(())
}

/// Adjoint sanity at `λ = 256`: the focused packet on its own axis dominates
/// the value ten cylinder radii away.
pub fn adjoint_off_axis_ratio(patch: &MetricPatch, seed: u64) -> Result<f64> {
    let lambda = 256.0;
    let fam = CylinderFamily::build(patch, lambda, 1.0)?;
    let alpha = nearest_to_center(&fam, 1)
        .first()
        .copied()
        .ok_or_else(|| LabError::domain("empty cylinder family"))?;
    let mut rng = item_rng(seed, 0);
    let cyl = &fam.cylinders[alpha];
    let on = adjoint_apply(patch, &fam, alpha, &CylinderField::Focused, lambda, &cyl.z)?.norm();
    let far = point_near_axis(patch, cyl, 0.0, 10.0 * fam.spacing, &mut rng)?;
    let off = adjoint_apply(patch, &fam, alpha, &CylinderField::Focused, lambda, &far)?.norm();
    Ok(off / on)
}

fn oscillatory(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let exp = Experiment::Oscillatory.name();
    let n = cfg.n;
    let family = match n {
        3 => Family::ThreeD,
        n if n % 2 == 1 => Family::OddFocus,
        _ => Family::EvenFocus,
    };
    let patch = oscillatory_patch(family, n)?;
    let label = patch.label();
    let lambdas = cfg.lambdas()?;

    let ratio = adjoint_off_axis_ratio(&patch, cfg.seed)?;
    rec.touch("adjoint_apply", 2);
    rec.check(Check::new(exp, "adjoint_off_axis_ratio", ratio, 0.25, 0.0, Relation::AtMost));

    let dual_lambdas: Vec<f64> = lambdas.iter().copied().filter(|&l| l <= LAMBDA_MAX).collect();
    let opts = DualTubeOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let (dual_fit, dual_pts) = dual_tube_scaling(&patch, &dual_lambdas, 1.0, &opts)?;
    rec.touch("dual_tube_scaling", 1);
    rec.touch("adjoint_apply", dual_pts.iter().map(|p| p.evaluations).sum());
    for p in &dual_pts {
        rec.row(exp, n, &format!("{label}_dual"), p.lambda, p.mean_abs, p.stderr, cfg.seed);
    }
    let dual_slope = dual_fit.slope;
    rec.fit(dual_fit);

    let (overlap_fit, counts) = overlap_scaling(&patch, &lambdas, 1.0, 20_000, derive_seed(cfg.seed, 1))?;
    rec.touch("overlap_count", counts.len());
    for &(l, k) in &counts {
        rec.row(exp, n, &format!("{label}_overlap"), l, k as f64, 0.0, cfg.seed);
    }
    rec.fit(overlap_fit);

    let lone = CylinderFamily::single(&patch, lambdas[0], 1.0, &CylinderFamily::build(&patch, lambdas[0], 1.0)?.region.center())?;
    let k = overlap_count(&lone, 400, cfg.seed);
    rec.touch("overlap_count", 1);
    rec.check(Check::new(exp, "single_cylinder_overlap", k as f64, 1.0, 0.0, Relation::Within));

    let single = CylinderFamily::build(&patch, lambdas[0], 1.0)?;
    let norm = square_function_norm(&single, cfg.q, 20_000, cfg.seed)?;
    rec.touch("square_function_norm", 1);
    rec.check(Check::new(exp, format!("square_function_norm_q{}", cfg.q), norm, 0.0, 0.0, Relation::AtLeast));

    let shifted: Vec<f64> = lambdas.iter().map(|l| 4.0 * l).collect();
    let mut slopes = Vec::new();
    for (i, q) in [1.25, 1.5, 2.0].into_iter().enumerate() {
        let fit = square_function_scaling(&patch, &shifted, 1.0, q, 20_000, derive_seed(cfg.seed, 2 + i as u64))?;
        rec.touch("square_function_norm", shifted.len());
        for &(l, v) in &fit.points {
            rec.row(exp, n, &format!("{label}_square_q{q}"), l, v, 0.0, cfg.seed);
        }
        slopes.push((q, fit.slope));
        rec.fit(fit);
    }
    let (a, b) = fit_square_function_exponents(&slopes)?;
    let chain = chain_inequality_check(
        n,
        Some(ChainExponents {
            dual: dual_slope,
            a,
            b,
        }),
        0.2,
    )?;
    rec.touch("chain_inequality_check", 1);
    rec.touch("exponent_threshold", 1);
    rec.chains.push(chain);
    Ok(())
}

fn thresholds(_cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    for n in 3..=7 {
        rec.thresholds.push(exponent_threshold(n)?);
        rec.chains.push(chain_inequality_check(n, None, 0.2)?);
    }
    rec.touch("exponent_threshold", 10);
    rec.touch("chain_inequality_check", 5);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            experiment: Experiment::Oscillatory,
            n: 4,
            family: "even_focus".into(),
            p: 3.0,
            seed: 99,
            ..Default::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(text.contains("experiment = \"oscillatory\""));
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            matches!(c.validate(), Err(LabError::Config(_)))
        };
        assert!(bad(|c| c.delta_range = "7..3".into()));
        assert!(bad(|c| c.delta_range = "3..4".into()));
        assert!(bad(|c| c.lambda_range = "a..9".into()));
        assert!(bad(|c| c.family = "sphere".into()));
        assert!(bad(|c| c.profile = "gaussian".into()));
        assert!(bad(|c| c.q = 2.5));
        assert!(bad(|c| c.p = 1.0));
        assert!(bad(|c| c.n = 2));
        assert!(ExperimentConfig::from_toml_str("colour = 3").is_err());
    }

    #[test]
    fn schedules_are_monotone() {
        let cfg = ExperimentConfig::default();
        let d = cfg.deltas().unwrap();
        assert!(d.windows(2).all(|w| w[0] > w[1]));
        let l = cfg.lambdas().unwrap();
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(d[0], 0.125);
        assert_eq!(l[0], 64.0);
    }

    #[test]
    fn experiment_names_parse() {
        for e in Experiment::SINGLE.iter().chain([Experiment::All].iter()) {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), *e);
        }
        assert!("everything".parse::<Experiment>().is_err());
    }

    #[test]
    fn thresholds_run_reports_exact_rationals() {
        let res = run(&ExperimentConfig::default()).unwrap();
        assert!(res.summary.passed);
        let json = res.summary_json().unwrap();
        assert!(json.contains("\"10/3\""));
        assert!(json.contains("\"14/5\""));
        assert_eq!(res.summary.coverage["exponent_threshold"], 10);
    }

    #[test]
    fn curvature_run_passes_for_linear_profile() {
        let cfg = ExperimentConfig {
            experiment: Experiment::Curvature,
            ..Default::default()
        };
        let res = run(&cfg).unwrap();
        assert!(res.summary.passed, "{:?}", res.summary.failures());
        let c = res.summary.checks.iter().find(|c| c.name == "r3232_k1_origin").unwrap();
        assert!((c.value + 0.75).abs() < 1e-4);
    }

    #[test]
    fn module_errors_are_reported_not_raised() {
        let cfg = ExperimentConfig {
            experiment: Experiment::Dimension,
            n: 4,
            family: "even_focus".into(),
            ..Default::default()
        };
        let res = run(&cfg).unwrap();
        assert!(!res.summary.passed);
        assert_eq!(res.summary.errors.len(), 1);
        assert_eq!(res.summary.errors[0].kind, "domain");
    }

    #[test]
    fn svg_has_one_marker_per_point() {
        let fit = ScalingFit::from_points("demo", &[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)], 2.0, 0.1).unwrap();
        let svg = svg_plot(&fit);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
