//! Cylinder families, the adjoint oscillatory operator with Riemannian
//! distance phase, overlap counts, square-function norms and the exponent
//! arithmetic that links them.
//!
//! All cylinders live in the Euclidean half-space `x_m ≥ 0` of an exp-flat
//! patch, where geodesics are straight lines. Their axes are the fan
//! geodesics through centers `z_α` on the hyperplane `x_m = −1`.

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::greedy_separated;
use crate::distance::{chart_distance, Shooter, ShootingOptions};
use crate::error::{LabError, Result};
use crate::fit::{slope_fit, ScalingFit, Verdict};
use crate::geodesic::{closed_form_fan, fan_covector, fan_point_unchecked, invert_fan, FanParams};
use crate::metric::{AlphaProfile, CoordBox, Family, MetricPatch};
use crate::quadrature::gauss_legendre;
use crate::rng::{derive_seed, item_rng};

pub const LAMBDA_MAX: f64 = 4096.0;
pub const NODES_PER_WAVELENGTH: f64 = 6.0;
const AXIAL_ORDER: usize = 8;
const RADIAL_ORDER: usize = 3;
const PHASE_STATIONS: usize = 17;
const CANDIDATE_REFINEMENT: f64 = 1.0;
/// Radius of the smooth bump in `y`.
pub const BUMP_RADIUS: f64 = 1.0;
/// Excluded neighborhood of the diagonal.
pub const DIAGONAL_CUTOFF: f64 = 0.25;

/// The exp-flat patch on `[−1.25, 1.25]^n` used for the oscillatory
/// experiments, or the Euclidean control patch on the same box.
pub fn oscillatory_patch(family: Family, n: usize) -> Result<MetricPatch> {
    MetricPatch::with_box(family, n, AlphaProfile::exp_flat_with(1.25)?, CoordBox::cube(n, 1.25))
}

/// The coordinate that is `−1` on the center plane and `≥ 0` on cylinders.
pub fn focus_index(patch: &MetricPatch) -> usize {
    let n = patch.dim();
    patch
        .coupling_index()
        .unwrap_or(if n % 2 == 1 { (n + 1) / 2 - 1 } else { (n + 2) / 2 - 1 })
}

/// Coordinates that vanish on the focusing plane.
pub fn tail_indices(patch: &MetricPatch) -> Vec<usize> {
    let n = patch.dim();
    let count = match patch.family() {
        Family::ThreeD => 1,
        Family::OddFocus => (n - 1) / 2,
        Family::EvenFocus => (n - 2) / 2,
        Family::Euclidean => {
            if n % 2 == 1 {
                (n - 1) / 2
            } else {
                (n - 2) / 2
            }
        }
    };
    (0..count).map(|i| n - 1 - i).collect()
}

/// Axis-aligned box of admissible centers inside the plane `x_m = −1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CenterRegion {
    /// Head coordinates in `[−0.5, 0.5]`, the untouched coordinate of the even
    /// family in `[−0.3, 0.3]`, and tail coordinates small enough that every
    /// fan direction stays admissible and its ray meets the unit ball.
    pub fn default_for(patch: &MetricPatch) -> Self {
        let n = patch.dim();
        let m = focus_index(patch);
        let tail = tail_indices(patch);
        let tail_hw = match patch.family() {
            Family::EvenFocus => 0.08,
            _ => 0.12,
        };
        let mut lo = vec![-0.5; n];
        let mut hi = vec![0.5; n];
        if n % 2 == 0 {
            lo[n / 2 - 1] = -0.3;
            hi[n / 2 - 1] = 0.3;
        }
        for &j in &tail {
            lo[j] = -tail_hw;
            hi[j] = tail_hw;
        }
        lo[m] = -1.0;
        hi[m] = -1.0;
        CenterRegion { lo, hi }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// `(n−1)`-dimensional measure.
    pub fn measure(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .filter(|(a, b)| b > a)
            .map(|(a, b)| b - a)
            .product()
    }

    /// Lattice of exact spacing `h` anchored at the region center.
    pub fn grid(&self, h: f64) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| {
                let c = 0.5 * (a + b);
                let k = ((0.5 * (b - a)) / h + 1e-9).floor() as i64;
                (-k..=k).map(|i| c + i as f64 * h).collect()
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// The `radius`-neighborhood of a straight axis, cut to `{x_m ≥ 0, |x| ≤ 1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cylinder {
    pub z: Vec<f64>,
    /// Point of the axis on `x_m = 0`.
    pub origin: Vec<f64>,
    /// Unit direction of the axis, pointing into `x_m > 0`.
    pub dir: Vec<f64>,
    pub radius: f64,
    pub focus: usize,
    /// Fan through `z`, absent for the Euclidean control.
    pub fan: Option<FanParams>,
}

impl Cylinder {
    /// Chart distance from `x` to the (infinite) axis line.
    pub fn axis_distance(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().zip(&self.origin).zip(&self.dir).map(|((a, o), d)| (a - o) * d).sum();
        x.iter()
            .zip(&self.origin)
            .zip(&self.dir)
            .map(|((a, o), d)| {
                let r = a - o - s * d;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x[self.focus] >= 0.0 && x.iter().map(|v| v * v).sum::<f64>() <= 1.0 && self.axis_distance(x) <= self.radius
    }

    fn cross_section_basis(&self) -> Vec<Vec<f64>> {
        orthonormal_complement(&self.dir)
    }

    /// Parameter interval of the line `origin + w + s·dir` inside `{x_m ≥ 0, |x| ≤ 1}`.
    fn interval(&self, w: &[f64]) -> Option<(f64, f64)> {
        let p: Vec<f64> = self.origin.iter().zip(w).map(|(a, b)| a + b).collect();
        let pd: f64 = p.iter().zip(&self.dir).map(|(a, b)| a * b).sum();
        let pp: f64 = p.iter().map(|v| v * v).sum();
        let disc = pd * pd - (pp - 1.0);
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let (mut lo, hi) = (-pd - root, -pd + root);
        let dm = self.dir[self.focus];
        if dm <= 0.0 {
            return None;
        }
        lo = lo.max(-p[self.focus] / dm);
        (hi > lo).then_some((lo, hi))
    }

    /// Uniform samples from the cylinder by rejection from the axis box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        let basis = self.cross_section_basis();
        let n = self.dir.len();
        let mut out = Vec::with_capacity(count);
        let Some((lo, hi)) = self.interval(&vec![0.0; n]) else {
            return out;
        };
        let (lo, hi) = (lo - self.radius, hi + self.radius);
        for _ in 0..count * 200 {
            if out.len() == count {
                break;
            }
            let s = lo + (hi - lo) * rng.gen::<f64>();
            let mut x: Vec<f64> = (0..n).map(|k| self.origin[k] + s * self.dir[k]).collect();
            for b in &basis {
                let c = self.radius * (2.0 * rng.gen::<f64>() - 1.0);
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi += c * bi);
            }
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }
}

fn orthonormal_complement(d: &[f64]) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut basis: Vec<Vec<f64>> = vec![d.to_vec()];
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= dot * bi);
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|c| c / norm).collect());
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Axis of the cylinder over the center `z`.
pub fn cylinder_axis(patch: &MetricPatch, z: &[f64], radius: f64) -> Result<Cylinder> {
    let m = focus_index(patch);
    if patch.family() == Family::Euclidean {
        let mut origin = z.to_vec();
        origin[m] = 0.0;
        let mut dir = vec![0.0; z.len()];
        dir[m] = 1.0;
        return Ok(Cylinder {
            z: z.to_vec(),
            origin,
            dir,
            radius,
            focus: m,
            fan: None,
        });
    }
    let (fan, _) = invert_fan(patch, z)?;
    // the anchor may lie outside the box; only the line through it matters
    let mut origin = vec![0.0; z.len()];
    fan_point_unchecked(patch, &fan, 0.0, &mut origin);
    // the cometric is the identity on x_m ≥ 0, so velocity equals covector
    let dir = fan_covector(patch, &fan)?;
    Ok(Cylinder {
        z: z.to_vec(),
        origin,
        dir,
        radius,
        focus: m,
        fan: Some(fan),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CylinderFamily {
    pub lambda: f64,
    pub c: f64,
    /// `λ^{−1/2}`.
    pub spacing: f64,
    pub region: CenterRegion,
    pub tail: Vec<usize>,
    pub cylinders: Vec<Cylinder>,
}

impl CylinderFamily {
    pub fn build(patch: &MetricPatch, lambda: f64, c: f64) -> Result<Self> {
        Self::with_region(patch, lambda, c, CenterRegion::default_for(patch))
    }

    /// Centers: a maximal `λ^{−1/2}`-separated subset of the center-anchored
    /// lattice of that spacing, selected by a greedy scan.
    pub fn with_region(patch: &MetricPatch, lambda: f64, c: f64, region: CenterRegion) -> Result<Self> {
        if !(lambda >= 1.0 && lambda.is_finite()) || !(c > 0.0) {
            return Err(LabError::domain("cylinder family needs λ ≥ 1 and c > 0"));
        }
        let spacing = lambda.powf(-0.5);
        let candidates = region.grid(spacing / CANDIDATE_REFINEMENT);
        // tolerate rounding in the lattice coordinates
        let chosen = greedy_separated(&candidates, spacing * (1.0 - 1e-9));
        let radius = c * spacing;
        let cylinders = chosen
            .iter()
            .map(|&i| cylinder_axis(patch, &candidates[i], radius))
            .collect::<Result<Vec<_>>>()?;
        Ok(CylinderFamily {
            lambda,
            c,
            spacing,
            region,
            tail: tail_indices(patch),
            cylinders,
        })
    }

    pub fn single(patch: &MetricPatch, lambda: f64, c: f64, z: &[f64]) -> Result<Self> {
        let spacing = lambda.powf(-0.5);
        Ok(CylinderFamily {
            lambda,
            c,
            spacing,
            region: CenterRegion {
                lo: z.to_vec(),
                hi: z.to_vec(),
            },
            tail: tail_indices(patch),
            cylinders: vec![cylinder_axis(patch, z, c * spacing)?],
        })
    }

    pub fn len(&self) -> usize {
        self.cylinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cylinders.is_empty()
    }

    /// `|region| / λ^{−(n−1)/2}`: the count of a λ^{−1/2}-lattice on the region.
    pub fn expected_count(&self) -> f64 {
        let d = self.region.lo.len() as i32 - 1;
        self.region.measure() / self.spacing.powi(d)
    }

    pub fn multiplicity(&self, x: &[f64]) -> usize {
        self.cylinders.iter().filter(|c| c.contains(x)).count()
    }

    /// Largest `|x_j| / λ^{−1/2}` over tail coordinates of sampled cylinder points.
    pub fn slab_constant<R: Rng + ?Sized>(&self, rng: &mut R, per_cylinder: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for cyl in &self.cylinders {
            for x in cyl.sample(rng, per_cylinder) {
                for &j in &self.tail {
                    worst = worst.max(x[j].abs() / self.spacing);
                }
            }
        }
        worst
    }

    pub fn total_measure(&self) -> f64 {
        self.cylinders.iter().map(|c| CylinderQuadrature::new(c, 0.0).map_or(0.0, |q| q.measure())).sum()
    }

    /// Half-width of the slab that contains every cylinder.
    fn slab_half_width(&self) -> f64 {
        self.cylinders.iter().map(|c| c.radius).fold(0.0, f64::max)
    }

    /// A point uniformly distributed in the slab box and its volume.
    fn slab_sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, focus: usize) -> Vec<f64> {
        let w = self.slab_half_width();
        (0..n)
            .map(|j| {
                if j == focus {
                    rng.gen::<f64>()
                } else if self.tail.contains(&j) {
                    w * (2.0 * rng.gen::<f64>() - 1.0)
                } else {
                    2.0 * rng.gen::<f64>() - 1.0
                }
            })
            .collect()
    }

    fn slab_volume(&self, n: usize) -> f64 {
        let w = self.slab_half_width();
        let t = self.tail.len() as i32;
        (2.0 * w).powi(t) * 2f64.powi(n as i32 - 1 - t)
    }
}

/// One line of quadrature nodes parallel to the axis.
#[derive(Clone, Debug)]
struct NodeLine {
    offset: Vec<f64>,
    weight: f64,
    lo: f64,
    hi: f64,
}

/// Tensor quadrature over one cylinder: Gauss radial nodes times uniform
/// angles (8 in a disc, the 12 icosahedron vertices in a ball), and
/// composite Gauss-Legendre along the axis.
#[derive(Clone, Debug)]
pub struct CylinderQuadrature<'c> {
    cyl: &'c Cylinder,
    lines: Vec<NodeLine>,
    /// (line index, axial parameter, weight)
    nodes: Vec<(usize, f64, f64)>,
}

fn cross_section_rule(dim: usize, radius: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    let (gx, gw) = gauss_legendre(RADIAL_ORDER);
    let dirs: Vec<Vec<f64>> = match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..8)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 4.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let phi = (1.0 + 5f64.sqrt()) / 2.0;
            let norm = (1.0 + phi * phi).sqrt();
            let mut v = Vec::new();
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    v.push(vec![0.0, s1 / norm, s2 * phi / norm]);
                    v.push(vec![s1 / norm, s2 * phi / norm, 0.0]);
                    v.push(vec![s2 * phi / norm, 0.0, s1 / norm]);
                }
            }
            v
        }
        _ => return Err(LabError::domain(format!("no cross-section rule in dimension {dim}"))),
    };
    // total solid angle of the unit sphere in `dim` dimensions
    let sphere = match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    let mut out = Vec::new();
    for (x, w) in gx.iter().zip(&gw) {
        let r = 0.5 * radius * (x + 1.0);
        let wr = 0.5 * radius * w * r.powi(dim as i32 - 1);
        for d in &dirs {
            out.push((d.iter().map(|c| c * r).collect(), wr * sphere / dirs.len() as f64));
        }
    }
    Ok(out)
}

impl<'c> CylinderQuadrature<'c> {
    /// Nodes resolving oscillations of frequency `lambda` along the axis.
    pub fn new(cyl: &'c Cylinder, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(LabError::domain("λ must be nonnegative"));
        }
        if lambda > LAMBDA_MAX {
            return Err(LabError::Resolution(format!("λ = {lambda} exceeds λ_max = {LAMBDA_MAX}")));
        }
        let basis = cyl.cross_section_basis();
        let rule = cross_section_rule(basis.len(), cyl.radius)?;
        let (ax, aw) = gauss_legendre(AXIAL_ORDER);
        let mut lines = Vec::new();
        let mut nodes = Vec::new();
        for (coef, weight) in rule {
            let mut offset = vec![0.0; cyl.dir.len()];
            for (c, b) in coef.iter().zip(&basis) {
                offset.iter_mut().zip(b).for_each(|(o, bi)| *o += c * bi);
            }
            let Some((lo, hi)) = cyl.interval(&offset) else {
                continue;
            };
            let li = lines.len();
            let wanted = NODES_PER_WAVELENGTH * lambda * (hi - lo) / (2.0 * std::f64::consts::PI);
            let panels = ((wanted / AXIAL_ORDER as f64).ceil() as usize).max(2);
            let h = (hi - lo) / panels as f64;
            for p in 0..panels {
                let a = lo + p as f64 * h;
                for (x, w) in ax.iter().zip(&aw) {
                    nodes.push((li, a + 0.5 * h * (x + 1.0), 0.5 * h * w * weight));
                }
            }
            lines.push(NodeLine { offset, weight, lo, hi });
        }
        Ok(CylinderQuadrature { cyl, lines, nodes })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn point(&self, line: usize, s: f64) -> Vec<f64> {
        let l = &self.lines[line];
        self.cyl
            .origin
            .iter()
            .zip(&self.cyl.dir)
            .zip(&l.offset)
            .map(|((o, d), w)| o + s * d + w)
            .collect()
    }

    /// Quadrature measure of the cylinder (exact up to the cross-section rule).
    pub fn measure(&self) -> f64 {
        self.lines.iter().map(|l| l.weight * (l.hi - l.lo)).sum()
    }
}

/// Cubic Hermite table of `x ↦ dist(base, x)` along every node line.
#[derive(Clone, Debug)]
struct PhaseTable {
    lines: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl PhaseTable {
    fn build(patch: &MetricPatch, quad: &CylinderQuadrature, base: &[f64], stations: usize) -> Result<Self> {
        let shooter = Shooter::with_options(
            patch,
            ShootingOptions {
                max_chord: 3.0,
                max_step: 2e-3,
                check_ambiguity: false,
                ..ShootingOptions::default()
            },
        );
        let dir = &quad.cyl.dir;
        let mut warm: Option<Vec<f64>> = None;
        let mut lines = Vec::with_capacity(quad.lines.len());
        for (li, l) in quad.lines.iter().enumerate() {
            let mut ss = Vec::with_capacity(stations);
            let mut vals = Vec::with_capacity(stations);
            let mut ders = Vec::with_capacity(stations);
            let mut line_warm = warm.clone();
            for k in 0..stations {
                let s = l.lo + (l.hi - l.lo) * k as f64 / (stations - 1) as f64;
                let x = quad.point(li, s);
                let shot = shooter.shoot(base, &x, line_warm.as_deref())?;
                line_warm = Some(shot.velocity());
                if k == 0 {
                    warm = line_warm.clone();
                }
                ss.push(s);
                vals.push(shot.length);
                ders.push(shot.xi_end.iter().zip(dir).map(|(a, b)| a * b).sum());
            }
            lines.push((ss, vals, ders));
        }
        Ok(PhaseTable { lines })
    }

    fn eval(&self, line: usize, s: f64) -> f64 {
        let (ss, vals, ders) = &self.lines[line];
        let k = ss.partition_point(|&t| t <= s).clamp(1, ss.len() - 1) - 1;
        let h = ss[k + 1] - ss[k];
        let t = (s - ss[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * vals[k] + h10 * h * ders[k] + h01 * vals[k + 1] + h11 * h * ders[k + 1]
    }
}

/// Field supported in one cylinder.
pub enum CylinderField<'f> {
    /// `χ_T`.
    Indicator,
    /// `e^{iλ dist(x, z_α)} χ_T`: the focused wave packet.
    Focused,
    Custom(&'f (dyn Fn(&[f64]) -> Complex64 + Sync)),
}

/// Fixed bump `exp(1 − 1/(1 − |y − y0|²/R²))` in the observation point.
pub fn amplitude_bump(y: &[f64], y0: &[f64]) -> f64 {
    let r2 = chart_distance(y, y0).powi(2) / (BUMP_RADIUS * BUMP_RADIUS);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Evaluator for `S*_λ g(y) = ∫ e^{−iλ dist(x, y)} a(x, y) g(x) dx` over one cylinder.
pub struct Adjoint<'a> {
    patch: &'a MetricPatch,
    quad: CylinderQuadrature<'a>,
    lambda: f64,
    bump_center: Vec<f64>,
    stations: usize,
    focus_phase: Option<PhaseTable>,
}

impl<'a> Adjoint<'a> {
    pub fn new(patch: &'a MetricPatch, cyl: &'a Cylinder, lambda: f64, bump_center: Vec<f64>) -> Result<Self> {
        Ok(Adjoint {
            patch,
            quad: CylinderQuadrature::new(cyl, lambda)?,
            lambda,
            bump_center,
            stations: PHASE_STATIONS,
            focus_phase: None,
        })
    }

    /// Number of shooting stations per node line for the phase interpolant.
    pub fn with_stations(mut self, stations: usize) -> Self {
        self.stations = stations.max(2);
        self.focus_phase = None;
        self
    }

    pub fn quadrature(&self) -> &CylinderQuadrature<'a> {
        &self.quad
    }

    fn euclidean(&self) -> bool {
        self.patch.family() == Family::Euclidean
    }

    fn phase_table(&self, base: &[f64]) -> Result<Option<PhaseTable>> {
        if self.euclidean() || self.lambda == 0.0 {
            Ok(None)
        } else {
            PhaseTable::build(self.patch, &self.quad, base, self.stations).map(Some)
        }
    }

    fn distance(&self, table: &Option<PhaseTable>, base: &[f64], line: usize, s: f64, x: &[f64]) -> f64 {
        match table {
            Some(t) => t.eval(line, s),
            None => chart_distance(base, x),
        }
    }

    pub fn apply(&mut self, field: &CylinderField, y: &[f64]) -> Result<Complex64> {
        let bump = amplitude_bump(y, &self.bump_center);
        if bump == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if matches!(field, CylinderField::Focused) && self.focus_phase.is_none() {
            let z = self.quad.cyl.z.clone();
            self.focus_phase = Some(self.phase_table(&z)?.unwrap_or(PhaseTable { lines: vec![] }));
        }
        let y_table = self.phase_table(y)?;
        let z = &self.quad.cyl.z;
        let lambda = self.lambda;
        let mut acc = Complex64::new(0.0, 0.0);
        for &(li, s, w) in &self.quad.nodes {
            let x = self.quad.point(li, s);
            if chart_distance(&x, y) < DIAGONAL_CUTOFF {
                continue;
            }
            let dy = if lambda == 0.0 { 0.0 } else { self.distance(&y_table, y, li, s, &x) };
            let g = match field {
                CylinderField::Indicator => Complex64::new(1.0, 0.0),
                CylinderField::Focused => {
                    if lambda == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        let table = self.focus_phase.as_ref().filter(|t| !t.lines.is_empty());
                        let dz = match table {
                            Some(t) => t.eval(li, s),
                            None => chart_distance(z, &x),
                        };
                        Complex64::from_polar(1.0, lambda * dz)
                    }
                }
                CylinderField::Custom(f) => f(&x),
            };
            acc += Complex64::from_polar(w, -lambda * dy) * g;
        }
        Ok(acc * bump)
    }
}

/// One-shot adjoint evaluation for cylinder `alpha` of `family`.
pub fn adjoint_apply(
    patch: &MetricPatch,
    family: &CylinderFamily,
    alpha: usize,
    field: &CylinderField,
    lambda: f64,
    y: &[f64],
) -> Result<Complex64> {
    let cyl = family
        .cylinders
        .get(alpha)
        .ok_or_else(|| LabError::domain(format!("no cylinder with index {alpha}")))?;
    Adjoint::new(patch, cyl, lambda, family.region.center())?.apply(field, y)
}

/// A point near `γ_z`: arclength offset `tau` from `z` plus a transverse
/// displacement of chart length `offset` in a random direction.
pub fn point_near_axis<R: Rng + ?Sized>(patch: &MetricPatch, cyl: &Cylinder, tau: f64, offset: f64, rng: &mut R) -> Result<Vec<f64>> {
    let (on, vel) = match &cyl.fan {
        Some(fan) => {
            let t = -1.0 / cyl.dir[cyl.focus];
            let p = closed_form_fan(patch, fan, t + tau)?;
            let q = closed_form_fan(patch, fan, t + tau + 1e-6)?;
            let v: Vec<f64> = q.iter().zip(&p).map(|(a, b)| (a - b) / 1e-6).collect();
            (p, v)
        }
        None => (
            cyl.z.iter().zip(&cyl.dir).map(|(a, d)| a + tau * d).collect(),
            cyl.dir.clone(),
        ),
    };
    let vn = vel.iter().map(|c| c * c).sum::<f64>().sqrt();
    let unit: Vec<f64> = vel.iter().map(|c| c / vn).collect();
    let basis = orthonormal_complement(&unit);
    use rand_distr::{Distribution, StandardNormal};
    let coef: Vec<f64> = basis.iter().map(|_| StandardNormal.sample(rng)).collect();
    let cn = coef.iter().map(|c: &f64| c * c).sum::<f64>().sqrt().max(1e-12);
    let mut y = on;
    for (c, b) in coef.iter().zip(&basis) {
        y.iter_mut().zip(b).for_each(|(yi, bi)| *yi += offset * c / cn * bi);
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualTubeOptions {
    /// Number of centers nearest the region center.
    pub centers: usize,
    pub points_per_center: usize,
    /// Transverse offsets are at most `offset_factor · λ^{−1/2}`.
    pub offset_factor: f64,
    pub seed: u64,
}

impl Default for DualTubeOptions {
    fn default() -> Self {
        DualTubeOptions {
            centers: 2,
            points_per_center: 3,
            offset_factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualTubePoint {
    pub lambda: f64,
    pub mean_abs: f64,
    pub stderr: f64,
    pub mean_measure: f64,
    pub evaluations: usize,
}

pub fn nearest_to_center(family: &CylinderFamily, count: usize) -> Vec<usize> {
    let center = family.region.center();
    let mut idx: Vec<usize> = (0..family.len()).collect();
    idx.sort_by(|&a, &b| {
        chart_distance(&family.cylinders[a].z, &center)
            .partial_cmp(&chart_distance(&family.cylinders[b].z, &center))
            .unwrap()
    });
    idx.truncate(count);
    idx
}

/// Mean of `|S*_λ g_α(y)|` over `y` near `γ_{z_α}` as a function of `λ`.
pub fn dual_tube_scaling(
    patch: &MetricPatch,
    lambdas: &[f64],
    c: f64,
    opts: &DualTubeOptions,
) -> Result<(ScalingFit, Vec<DualTubePoint>)> {
    let n = patch.dim();
    let mut points = Vec::with_capacity(lambdas.len());
    for (li, &lambda) in lambdas.iter().enumerate() {
        let family = CylinderFamily::build(patch, lambda, c)?;
        let chosen = nearest_to_center(&family, opts.centers);
        let per_center: Vec<Result<(Vec<f64>, f64)>> = chosen
            .par_iter()
            .enumerate()
            .map(|(k, &alpha)| {
                let cyl = &family.cylinders[alpha];
                let mut adj = Adjoint::new(patch, cyl, lambda, family.region.center())?;
                let measure = adj.quadrature().measure();
                let mut rng = item_rng(derive_seed(opts.seed, li as u64), k as u64);
                let mut vals = Vec::with_capacity(opts.points_per_center);
                for _ in 0..opts.points_per_center {
                    let tau = 0.1 * rng.gen::<f64>() - 0.05;
                    let off = opts.offset_factor * family.spacing * rng.gen::<f64>().powf(1.0 / (n - 1) as f64);
                    let y = point_near_axis(patch, cyl, tau, off, &mut rng)?;
                    vals.push(adj.apply(&CylinderField::Focused, &y)?.norm());
                }
                Ok((vals, measure))
            })
            .collect();
        let mut all = Vec::new();
        let mut measures = Vec::new();
        for r in per_center {
            let (v, m) = r?;
            all.extend(v);
            measures.push(m);
        }
        let k = all.len() as f64;
        let mean = all.iter().sum::<f64>() / k;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        points.push(DualTubePoint {
            lambda,
            mean_abs: mean,
            stderr: (var / k).sqrt(),
            mean_measure: measures.iter().sum::<f64>() / measures.len() as f64,
            evaluations: all.len(),
        });
    }
    let fit = slope_fit(&points.iter().map(|p| (p.lambda, p.mean_abs)).collect::<Vec<_>>())?;
    let tol = if n == 3 { 0.15 } else { 0.2 };
    Ok((
        ScalingFit::assess(format!("dual_tube_n{n}_{}", patch.family().name()), fit, -(n as f64 - 1.0) / 2.0, tol),
        points,
    ))
}

/// Maximum number of cylinders containing a probe. Half of the probes are
/// uniform in the slab, half are drawn from uniformly chosen cylinders.
pub fn overlap_count(family: &CylinderFamily, probes: usize, seed: u64) -> usize {
    if family.is_empty() {
        return 0;
    }
    let n = family.cylinders[0].dir.len();
    let focus = family.cylinders[0].focus;
    let chunks = 16usize;
    (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = item_rng(seed, ci as u64);
            let mut best = 0;
            for i in 0..probes.div_ceil(chunks) {
                let x = if i % 2 == 0 {
                    family.slab_sample(&mut rng, n, focus)
                } else {
                    let k = rng.gen_range(0..family.len());
                    match family.cylinders[k].sample(&mut rng, 1).pop() {
                        Some(x) => x,
                        None => continue,
                    }
                };
                best = best.max(family.multiplicity(&x));
            }
            best
        })
        .max()
        .unwrap_or(0)
}

/// Multiplicity exponent: `(n−1)/4` for odd `n`, `(n−2)/4` for even `n`.
pub fn overlap_exponent(n: usize) -> f64 {
    if n % 2 == 1 {
        (n as f64 - 1.0) / 4.0
    } else {
        (n as f64 - 2.0) / 4.0
    }
}

pub fn overlap_scaling(patch: &MetricPatch, lambdas: &[f64], c: f64, probes: usize, seed: u64) -> Result<(ScalingFit, Vec<(f64, usize)>)> {
    let n = patch.dim();
    let mut counts = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let family = CylinderFamily::build(patch, lambda, c)?;
        // enough probes to resolve the multiplicity function at scale cλ^{−1/2}
        let resolved = (8.0 * lambda / (c * c)).ceil() as usize;
        counts.push((lambda, overlap_count(&family, probes.max(resolved), derive_seed(seed, i as u64))));
    }
    let pts: Vec<(f64, f64)> = counts.iter().map(|&(l, k)| (l, k as f64)).collect();
    let fit = ScalingFit::from_points(format!("overlap_n{n}"), &pts, overlap_exponent(n), 0.1)?;
    Ok((fit, counts))
}

/// Monte-Carlo `‖(Σ_α χ_{T_α})^{1/2}‖_{L^{q'}}` over the unit ball.
pub fn square_function_norm(family: &CylinderFamily, q_prime: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(q_prime > 1.0 && q_prime <= 2.0) {
        return Err(LabError::domain(format!("q' must lie in (1, 2], got {q_prime}")));
    }
    if family.is_empty() {
        return Ok(0.0);
    }
    let n = family.cylinders[0].dir.len();
    let focus = family.cylinders[0].focus;
    let chunks = 16usize;
    let per = samples.div_ceil(chunks);
    let sum: f64 = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = item_rng(seed, ci as u64);
            let mut s = 0.0;
            for _ in 0..per {
                let x = family.slab_sample(&mut rng, n, focus);
                let k = family.multiplicity(&x);
                if k > 0 {
                    s += (k as f64).powf(q_prime / 2.0);
                }
            }
            s
        })
        .sum();
    let integral = family.slab_volume(n) * sum / (per * chunks) as f64;
    Ok(integral.powf(1.0 / q_prime))
}

/// Predicted λ-slope `a + b/q'` of the square-function norm.
pub fn square_function_exponent(n: usize, q_prime: f64) -> f64 {
    let k = if n % 2 == 1 { n as f64 - 1.0 } else { n as f64 - 2.0 };
    k / 8.0 - k / (4.0 * q_prime)
}

pub fn square_function_scaling(
    patch: &MetricPatch,
    lambdas: &[f64],
    c: f64,
    q_prime: f64,
    samples: usize,
    seed: u64,
) -> Result<ScalingFit> {
    let n = patch.dim();
    let mut pts = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let family = CylinderFamily::build(patch, lambda, c)?;
        pts.push((lambda, square_function_norm(&family, q_prime, samples, derive_seed(seed, i as u64))?));
    }
    ScalingFit::from_points(format!("square_function_n{n}_q{q_prime}"), &pts, square_function_exponent(n, q_prime), 0.1)
}

/// Intercept `a` and coefficient `b` of `σ(q') = a + b/q'` by least squares.
pub fn fit_square_function_exponents(slopes: &[(f64, f64)]) -> Result<(f64, f64)> {
    if slopes.len() < 2 {
        return Err(LabError::domain("need square-function slopes at two or more q'"));
    }
    let k = slopes.len() as f64;
    let xs: Vec<f64> = slopes.iter().map(|(q, _)| 1.0 / q).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = slopes.iter().map(|(_, s)| s).sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::domain("need distinct q'"));
    }
    let sxy: f64 = xs.iter().zip(slopes).map(|(x, (_, s))| (x - mx) * (s - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Threshold {
    pub n: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub threshold: Ratio<i64>,
    /// `2n/(n−1)`.
    #[serde(serialize_with = "ser_ratio")]
    pub baseline: Ratio<i64>,
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

pub fn exponent_threshold(n: usize) -> Result<Threshold> {
    if n < 3 {
        return Err(LabError::domain(format!("exponent threshold needs n ≥ 3, got {n}")));
    }
    let ni = n as i64;
    let threshold = if n % 2 == 1 {
        Ratio::new(2 * (3 * ni + 1), 3 * (ni - 1))
    } else {
        Ratio::new(2 * (3 * ni + 2), 3 * ni - 2)
    };
    Ok(Threshold {
        n,
        threshold,
        baseline: Ratio::new(2 * ni, ni - 1),
    })
}

/// Exponents entering the chain: dual-tube slope `s_d` and the
/// square-function slope `a + b/q'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainExponents {
    pub dual: f64,
    pub a: f64,
    pub b: f64,
}

/// The exact exponents `(s_d, a, b)` as rationals.
pub fn symbolic_exponents(n: usize) -> (Ratio<i64>, Ratio<i64>, Ratio<i64>) {
    let ni = n as i64;
    let k = if n % 2 == 1 { ni - 1 } else { ni - 2 };
    (Ratio::new(-(ni - 1), 2), Ratio::new(k, 8), Ratio::new(-k, 4))
}

/// `q ≥ (n + b)/(a + b − s_d)`: the range of `q` for which the chain
/// `λ^{s_d} ≲ λ^{−n/q} λ^{a} λ^{b/q'}` can hold for large `λ`.
pub fn implied_threshold_exact(n: usize, dual: Ratio<i64>, a: Ratio<i64>, b: Ratio<i64>) -> Result<Ratio<i64>> {
    let den = a + b - dual;
    if den <= Ratio::from_integer(0) {
        return Err(LabError::domain("chain exponents give no finite threshold"));
    }
    Ok((Ratio::from_integer(n as i64) + b) / den)
}

pub fn implied_threshold(n: usize, e: &ChainExponents) -> Result<f64> {
    let den = e.a + e.b - e.dual;
    if !(den > 0.0) {
        return Err(LabError::domain("chain exponents give no finite threshold"));
    }
    Ok((n as f64 + e.b) / den)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub n: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub exact: Ratio<i64>,
    #[serde(serialize_with = "ser_ratio")]
    pub symbolic: Ratio<i64>,
    pub measured_exponents: Option<ChainExponents>,
    pub measured: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

pub fn chain_inequality_check(n: usize, measured: Option<ChainExponents>, tolerance: f64) -> Result<ChainReport> {
    let exact = exponent_threshold(n)?.threshold;
    let (d, a, b) = symbolic_exponents(n);
    let symbolic = implied_threshold_exact(n, d, a, b)?;
    let measured_q = measured.as_ref().map(|e| implied_threshold(n, e)).transpose()?;
    let exact_f = *exact.numer() as f64 / *exact.denom() as f64;
    let ok = symbolic == exact && measured_q.is_none_or(|q| (q - exact_f).abs() <= tolerance);
    Ok(ChainReport {
        n,
        exact,
        symbolic,
        measured_exponents: measured,
        measured: measured_q,
        tolerance,
        verdict: Verdict::from_bool(ok),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch3() -> MetricPatch {
        oscillatory_patch(Family::ThreeD, 3).unwrap()
    }

    #[test]
    fn thresholds_are_exact() {
        assert_eq!(exponent_threshold(3).unwrap().threshold, Ratio::new(10, 3));
        assert_eq!(exponent_threshold(4).unwrap().threshold, Ratio::new(14, 5));
        let t5 = exponent_threshold(5).unwrap();
        assert_eq!(t5.threshold, Ratio::new(8, 3));
        assert!(t5.threshold > t5.baseline);
        assert!(exponent_threshold(2).is_err());
        for n in 3..12 {
            let rep = chain_inequality_check(n, None, 0.2).unwrap();
            assert_eq!(rep.symbolic, rep.exact);
            assert!(rep.verdict.passed());
        }
    }

    #[test]
    fn square_function_exponent_fit_inverts() {
        let pts: Vec<(f64, f64)> = [1.25, 1.5, 2.0].iter().map(|&q| (q, square_function_exponent(3, q))).collect();
        let (a, b) = fit_square_function_exponents(&pts).unwrap();
        assert!((a - 0.25).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cylinders_lie_in_the_slab() {
        let p = patch3();
        let fam = CylinderFamily::build(&p, 256.0, 1.0).unwrap();
        let ratio = fam.len() as f64 / fam.expected_count();
        assert!((0.5..=2.0).contains(&ratio), "{ratio}");
        let mut rng = item_rng(1, 0);
        assert!(fam.slab_constant(&mut rng, 20) <= 4.0 * fam.c);
        for cyl in &fam.cylinders {
            assert!(cyl.origin[2].abs() < 1e-12 && cyl.dir[2].abs() < 1e-12);
        }
    }

    #[test]
    fn indicator_quadrature_is_the_measure() {
        let p = patch3();
        let fam = CylinderFamily::build(&p, 64.0, 1.0).unwrap();
        let cyl = &fam.cylinders[0];
        let q = CylinderQuadrature::new(cyl, 0.0).unwrap();
        let y = cyl.z.clone();
        let v = adjoint_apply(&p, &fam, 0, &CylinderField::Indicator, 0.0, &y).unwrap();
        let bump = amplitude_bump(&y, &fam.region.center());
        assert!((v.norm() - bump * q.measure()).abs() < 1e-12);
        // Monte Carlo cross-check of the measure
        let mut rng = item_rng(3, 0);
        let hits = (0..200_000)
            .filter(|_| {
                let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
                cyl.contains(&x)
            })
            .count();
        let mc = 8.0 * hits as f64 / 200_000.0;
        assert!((mc - q.measure()).abs() < 0.1 * q.measure(), "{mc} {}", q.measure());
    }

    #[test]
    fn lambda_limit_is_enforced() {
        let p = patch3();
        let fam = CylinderFamily::build(&p, 64.0, 1.0).unwrap();
        let r = Adjoint::new(&p, &fam.cylinders[0], 2.0 * LAMBDA_MAX, fam.region.center());
        assert!(matches!(r, Err(LabError::Resolution(_))));
    }

    #[test]
    fn focused_packet_does_not_cancel_at_its_center() {
        let p = patch3();
        let lambda = 128.0;
        let fam = CylinderFamily::build(&p, lambda, 1.0).unwrap();
        let alpha = nearest_to_center(&fam, 1)[0];
        let cyl = &fam.cylinders[alpha];
        let mut adj = Adjoint::new(&p, cyl, lambda, fam.region.center()).unwrap();
        let measure = adj.quadrature().measure();
        let on = adj.apply(&CylinderField::Focused, &cyl.z).unwrap().norm();
        let bump = amplitude_bump(&cyl.z, &fam.region.center());
        assert!((on - bump * measure).abs() < 1e-6 * measure, "{on} {}", bump * measure);
    }

    #[test]
    fn adjoint_quadrature_is_converged_and_decays_off_the_tube() {
        let p = patch3();
        let lambda = 256.0;
        let fam = CylinderFamily::build(&p, lambda, 1.0).unwrap();
        let alpha = nearest_to_center(&fam, 1)[0];
        let cyl = &fam.cylinders[alpha];
        let mut rng = item_rng(4, 0);
        let near = point_near_axis(&p, cyl, 0.03, 0.5 * fam.spacing, &mut rng).unwrap();
        let mut coarse = Adjoint::new(&p, cyl, lambda, fam.region.center()).unwrap();
        let mut fine = Adjoint::new(&p, cyl, lambda, fam.region.center()).unwrap().with_stations(33);
        let a = coarse.apply(&CylinderField::Focused, &near).unwrap();
        let b = fine.apply(&CylinderField::Focused, &near).unwrap();
        assert!((a - b).norm() <= 0.05 * b.norm(), "{a} {b}");
        let on = coarse.apply(&CylinderField::Focused, &cyl.z).unwrap().norm();
        let far = point_near_axis(&p, cyl, 0.0, 10.0 * fam.spacing, &mut rng).unwrap();
        let off = coarse.apply(&CylinderField::Focused, &far).unwrap().norm();
        assert!(off < 0.25 * on, "{off} {on}");
    }

    #[test]
    fn single_cylinder_overlap_is_one() {
        let p = patch3();
        let fam = CylinderFamily::single(&p, 256.0, 1.0, &[0.0, -1.0, 0.0]).unwrap();
        assert_eq!(overlap_count(&fam, 400, 1), 1);
        let empty = CylinderFamily { cylinders: vec![], ..fam.clone() };
        assert_eq!(overlap_count(&empty, 10, 1), 0);
        assert_eq!(square_function_norm(&empty, 1.5, 10, 1).unwrap(), 0.0);
    }
}
