//! Perturbation profiles and the cometric families built from them.
//!
//! Every non-Euclidean family has the form `g^{jk} = I + α(x_m)·C`, where `C`
//! couples disjoint index pairs symmetrically and `x_m` is the coupling
//! coordinate. The cometric is therefore block diagonal with 2×2 blocks
//! `[[1, α], [α, 1]]`, which makes the metric, determinant and Hamiltonian
//! available in closed form.
//!
//! Indices are 0-based throughout the crate.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quadrature;

/// Exponents below this make `e^{1/s}` subnormal; the profile is reported as
/// exactly zero there.
const EXP_FLAT_CUTOFF: f64 = -708.0;

const PRIMITIVE_GRID_NODES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `α(s) = e^{1/s}` for `s < 0`, zero otherwise.
    ExpFlat,
    /// `α(s) = s^k`.
    Monomial { k: u32 },
}

/// Memoized primitive of the exp-flat profile on `[-span, 0]`.
#[derive(Debug)]
struct PrimitiveTable {
    step: f64,
    // values[i] = primitive(-i * step)
    values: Vec<f64>,
}

impl PrimitiveTable {
    fn build(span: f64) -> Self {
        let step = span / PRIMITIVE_GRID_NODES as f64;
        let mut values = Vec::with_capacity(PRIMITIVE_GRID_NODES + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for i in 0..PRIMITIVE_GRID_NODES {
            let hi = -(i as f64) * step;
            let lo = -((i + 1) as f64) * step;
            // one smooth panel of width ~2e-4; the 1e-12 tolerance is never binding
            acc -= quadrature::integrate(exp_flat_value, lo, hi, 1e-15);
            values.push(acc);
        }
        PrimitiveTable { step, values }
    }

    fn span(&self) -> f64 {
        self.step * PRIMITIVE_GRID_NODES as f64
    }

    /// Cubic Hermite interpolation using the exact derivative `α`.
    fn eval(&self, s: f64) -> f64 {
        let u = -s / self.step;
        let i = (u.floor() as usize).min(PRIMITIVE_GRID_NODES - 1);
        let s0 = -(i as f64) * self.step;
        let s1 = -((i + 1) as f64) * self.step;
        let p0 = self.values[i];
        let p1 = self.values[i + 1];
        let d0 = exp_flat_value(s0);
        let d1 = exp_flat_value(s1);
        // parametrize from s1 (left) to s0 (right)
        let h = s0 - s1;
        let tau = (s - s1) / h;
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + tau;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * p1 + h10 * h * d1 + h01 * p0 + h11 * h * d0
    }
}

fn exp_flat_value(s: f64) -> f64 {
    if s >= 0.0 {
        return 0.0;
    }
    let e = 1.0 / s;
    if e < EXP_FLAT_CUTOFF {
        0.0
    } else {
        e.exp()
    }
}

/// The perturbation function `α` together with its primitive.
#[derive(Clone, Debug)]
pub struct AlphaProfile {
    kind: ProfileKind,
    s_max: f64,
    table: Option<Arc<PrimitiveTable>>,
}

impl AlphaProfile {
    pub const DEFAULT_MONOMIAL_S_MAX: f64 = 0.75;
    pub const DEFAULT_EXP_FLAT_S_MAX: f64 = 0.95;

    pub fn exp_flat() -> Self {
        Self::exp_flat_with(Self::DEFAULT_EXP_FLAT_S_MAX).expect("default s_max is valid")
    }

    /// Exp-flat profile with a custom working half-width. Since `e^{1/s} < 1`
    /// for every `s < 0`, any positive half-width keeps the cometric
    /// nondegenerate.
    pub fn exp_flat_with(s_max: f64) -> Result<Self> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(LabError::domain(format!("s_max must be positive, got {s_max}")));
        }
        Ok(AlphaProfile {
            kind: ProfileKind::ExpFlat,
            s_max,
            table: Some(Arc::new(PrimitiveTable::build(s_max))),
        })
    }

    pub fn monomial(k: u32) -> Result<Self> {
        Self::monomial_with(k, Self::DEFAULT_MONOMIAL_S_MAX)
    }

    pub fn monomial_with(k: u32, s_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(LabError::domain("monomial order must be positive"));
        }
        if !(s_max > 0.0 && s_max < 1.0) {
            return Err(LabError::domain(format!(
                "monomial profile needs s_max in (0, 1), got {s_max}"
            )));
        }
        Ok(AlphaProfile {
            kind: ProfileKind::Monomial { k },
            s_max,
            table: None,
        })
    }

    pub fn from_kind(kind: ProfileKind, s_max: Option<f64>) -> Result<Self> {
        match kind {
            ProfileKind::ExpFlat => Self::exp_flat_with(s_max.unwrap_or(Self::DEFAULT_EXP_FLAT_S_MAX)),
            ProfileKind::Monomial { k } => {
                Self::monomial_with(k, s_max.unwrap_or(Self::DEFAULT_MONOMIAL_S_MAX))
            }
        }
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn value(&self, s: f64) -> f64 {
        match self.kind {
            ProfileKind::ExpFlat => exp_flat_value(s),
            ProfileKind::Monomial { k } => s.powi(k as i32),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self.kind {
            ProfileKind::ExpFlat => {
                let v = exp_flat_value(s);
                if v == 0.0 {
                    0.0
                } else {
                    -v / (s * s)
                }
            }
            ProfileKind::Monomial { k } => {
                if k == 1 {
                    1.0
                } else {
                    k as f64 * s.powi(k as i32 - 1)
                }
            }
        }
    }

    /// `α^{(-1)}(s) = ∫_0^s α`.
    pub fn primitive(&self, s: f64) -> f64 {
        match self.kind {
            ProfileKind::Monomial { k } => s.powi(k as i32 + 1) / (k + 1) as f64,
            ProfileKind::ExpFlat => {
                if s >= 0.0 {
                    return 0.0;
                }
                match &self.table {
                    Some(t) if -s <= t.span() => t.eval(s),
                    _ => -quadrature::integrate(exp_flat_value, s, 0.0, 1e-12),
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ProfileKind::ExpFlat => "exp_flat".to_string(),
            ProfileKind::Monomial { k } => format!("monomial_k{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Euclidean,
    ThreeD,
    OddFocus,
    EvenFocus,
}

impl Family {
    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "euclidean" => Some(Family::Euclidean),
            "three_d" | "3d" => Some(Family::ThreeD),
            "odd_focus" | "odd" => Some(Family::OddFocus),
            "even_focus" | "even" => Some(Family::EvenFocus),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Euclidean => "euclidean",
            Family::ThreeD => "three_d",
            Family::OddFocus => "odd_focus",
            Family::EvenFocus => "even_focus",
        }
    }
}

/// Axis-aligned coordinate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordBox {
    pub fn cube(n: usize, half_width: f64) -> Self {
        CoordBox {
            lo: vec![-half_width; n],
            hi: vec![half_width; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo - SLACK && v <= hi + SLACK)
    }
}

/// One of the cometric families on a coordinate box.
#[derive(Clone, Debug)]
pub struct MetricPatch {
    n: usize,
    family: Family,
    alpha: AlphaProfile,
    bbox: CoordBox,
    coupling: Option<usize>,
    pairs: Vec<(usize, usize)>,
    partner: Vec<Option<usize>>,
}

impl MetricPatch {
    pub fn new(family: Family, n: usize, alpha: AlphaProfile) -> Result<Self> {
        Self::with_box(family, n, alpha, CoordBox::cube(n, 1.0))
    }

    pub fn euclidean(n: usize) -> Result<Self> {
        Self::new(Family::Euclidean, n, AlphaProfile::exp_flat())
    }

    pub fn three_d(alpha: AlphaProfile) -> Result<Self> {
        Self::new(Family::ThreeD, 3, alpha)
    }

    pub fn odd_focus(n: usize, alpha: AlphaProfile) -> Result<Self> {
        Self::new(Family::OddFocus, n, alpha)
    }

    pub fn even_focus(n: usize, alpha: AlphaProfile) -> Result<Self> {
        Self::new(Family::EvenFocus, n, alpha)
    }

    pub fn with_box(family: Family, n: usize, alpha: AlphaProfile, bbox: CoordBox) -> Result<Self> {
        if n < 2 {
            return Err(LabError::domain("dimension must be at least 2"));
        }
        if bbox.dim() != n || bbox.lo.iter().zip(&bbox.hi).any(|(lo, hi)| !(lo < hi)) {
            return Err(LabError::domain("box must have n nonempty sides"));
        }
        // 0-based coupling coordinate and coupled pairs
        let (coupling, pairs): (Option<usize>, Vec<(usize, usize)>) = match family {
            Family::Euclidean => (None, vec![]),
            Family::ThreeD => {
                if n != 3 {
                    return Err(LabError::domain("three_d family requires n = 3"));
                }
                (Some(1), vec![(0, 2)])
            }
            Family::OddFocus => {
                if n < 3 || n % 2 == 0 {
                    return Err(LabError::domain("odd_focus family requires odd n >= 3"));
                }
                let m = (n + 1) / 2; // 1-based focusing index
                let pairs = (1..=(n - 1) / 2).map(|j| (m - j - 1, m + j - 1)).collect();
                (Some(m - 1), pairs)
            }
            Family::EvenFocus => {
                if n < 4 || n % 2 == 1 {
                    return Err(LabError::domain("even_focus family requires even n >= 4"));
                }
                let m = (n + 2) / 2;
                let pairs = (1..=(n - 2) / 2).map(|j| (n / 2 - j - 1, m + j - 1)).collect();
                (Some(m - 1), pairs)
            }
        };
        let mut partner = vec![None; n];
        for &(a, b) in &pairs {
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
        Ok(MetricPatch {
            n,
            family,
            alpha,
            bbox,
            coupling,
            pairs,
            partner,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> &AlphaProfile {
        &self.alpha
    }

    pub fn bbox(&self) -> &CoordBox {
        &self.bbox
    }

    /// 0-based coupling coordinate, `None` for the Euclidean family.
    pub fn coupling_index(&self) -> Option<usize> {
        self.coupling
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Exponent `m` in `det g^{jk} = (1 - α²)^m`.
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::Euclidean => format!("euclidean_n{}", self.n),
            f => format!("{}_n{}_{}", f.name(), self.n, self.alpha.label()),
        }
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        if x.len() != self.n || !self.bbox.contains(x) {
            return false;
        }
        match self.coupling {
            Some(m) => x[m].abs() <= self.alpha.s_max() + 1e-12,
            None => true,
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(LabError::domain(format!(
                "point has {} coordinates, patch dimension is {}",
                x.len(),
                self.n
            )));
        }
        if !self.in_domain(x) {
            return Err(LabError::domain(format!("point {x:?} is outside the working domain")));
        }
        Ok(())
    }

    /// `α` evaluated at the coupling coordinate of `x` (0 for Euclidean).
    #[inline]
    pub fn alpha_at(&self, x: &[f64]) -> f64 {
        match self.coupling {
            Some(m) => self.alpha.value(x[m]),
            None => 0.0,
        }
    }

    #[inline]
    pub(crate) fn alpha_prime_at(&self, x: &[f64]) -> f64 {
        match self.coupling {
            Some(m) => self.alpha.derivative(x[m]),
            None => 0.0,
        }
    }

    /// `Σ_pairs ξ_a ξ_b`.
    #[inline]
    pub(crate) fn pair_product(&self, xi: &[f64]) -> f64 {
        self.pairs.iter().map(|&(a, b)| xi[a] * xi[b]).sum()
    }

    /// Writes `g^{jk}(x) ξ_k` into `out` without domain checks.
    #[inline]
    pub(crate) fn raise(&self, alpha: f64, xi: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = match self.partner[i] {
                Some(j) => xi[i] + alpha * xi[j],
                None => xi[i],
            };
        }
    }

    /// Writes `g_{jk}(x) v^k` into `out` without domain checks.
    #[inline]
    pub(crate) fn lower(&self, alpha: f64, v: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (1.0 - alpha * alpha);
        for i in 0..self.n {
            out[i] = match self.partner[i] {
                Some(j) => (v[i] - alpha * v[j]) * inv,
                None => v[i],
            };
        }
    }

    /// `ξᵀ g^{jk}(x) ξ` without domain checks.
    #[inline]
    pub(crate) fn hamiltonian_sq_unchecked(&self, x: &[f64], xi: &[f64]) -> f64 {
        let alpha = self.alpha_at(x);
        xi.iter().map(|v| v * v).sum::<f64>() + 2.0 * alpha * self.pair_product(xi)
    }

    /// `vᵀ g_{jk}(x) v` without domain checks.
    pub(crate) fn metric_norm_sq_unchecked(&self, x: &[f64], v: &[f64]) -> f64 {
        let alpha = self.alpha_at(x);
        let mut low = vec![0.0; self.n];
        self.lower(alpha, v, &mut low);
        low.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn cometric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let alpha = self.alpha_at(x);
        let mut g = DMatrix::identity(self.n, self.n);
        for &(a, b) in &self.pairs {
            g[(a, b)] = alpha;
            g[(b, a)] = alpha;
        }
        Ok(g)
    }

    /// Exact inverse of the cometric, block by block.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        let alpha = self.alpha_at(x);
        self.metric_from_alpha(alpha)
    }

    pub(crate) fn metric_from_alpha(&self, alpha: f64) -> Result<DMatrix<f64>> {
        if alpha.abs() >= 1.0 {
            return Err(LabError::Singular { alpha: alpha.abs() });
        }
        let mut g = DMatrix::identity(self.n, self.n);
        let inv = 1.0 / (1.0 - alpha * alpha);
        for &(a, b) in &self.pairs {
            g[(a, a)] = inv;
            g[(b, b)] = inv;
            g[(a, b)] = -alpha * inv;
            g[(b, a)] = -alpha * inv;
        }
        Ok(g)
    }

    /// Principal symbol `p(x, ξ) = sqrt(ξᵀ g^{jk}(x) ξ)`.
    pub fn hamiltonian(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        if xi.len() != self.n {
            return Err(LabError::domain("covector dimension mismatch"));
        }
        let q = self.hamiltonian_sq_unchecked(x, xi);
        if q < -1e-15 {
            return Err(LabError::Internal(format!(
                "negative radicand {q:e}: cometric is not positive definite"
            )));
        }
        Ok(q.max(0.0).sqrt())
    }

    /// Riemannian volume density `sqrt(det g_{jk}) = (1 - α²)^{-m/2}`.
    pub fn volume_density(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.volume_density_unchecked(x))
    }

    #[inline]
    pub(crate) fn volume_density_unchecked(&self, x: &[f64]) -> f64 {
        if self.pairs.is_empty() {
            return 1.0;
        }
        let alpha = self.alpha_at(x);
        (1.0 - alpha * alpha).powf(-(self.pairs.len() as f64) / 2.0)
    }

    /// Volume density as a function of the coupling coordinate alone.
    pub fn volume_density_at_coupling(&self, s: f64) -> f64 {
        if self.pairs.is_empty() {
            return 1.0;
        }
        let alpha = self.alpha.value(s);
        (1.0 - alpha * alpha).powf(-(self.pairs.len() as f64) / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_flat_profile_basics() {
        let a = AlphaProfile::exp_flat();
        assert_eq!(a.value(0.0), 0.0);
        assert_eq!(a.value(0.3), 0.0);
        assert_eq!(a.value(-1e-3), 0.0); // underflow region
        assert_relative_eq!(a.value(-0.5), (-2.0f64).exp());
        assert_eq!(a.primitive(0.2), 0.0);
        assert_eq!(a.primitive(0.0), 0.0);
        // reference from an independent adaptive integration
        let reference = -quadrature::integrate(|s: f64| (1.0 / s).exp(), -0.75, -1e-9, 1e-14);
        assert!((a.primitive(-0.75) - reference).abs() < 1e-12);
    }

    #[test]
    fn primitive_derivative_matches_profile() {
        let h = 1e-4;
        for profile in [
            AlphaProfile::exp_flat(),
            AlphaProfile::monomial(1).unwrap(),
            AlphaProfile::monomial(3).unwrap(),
        ] {
            for i in 0..100 {
                let s = -0.7 + 1.4 * i as f64 / 99.0;
                let fd = (profile.primitive(s + h) - profile.primitive(s - h)) / (2.0 * h);
                assert!(
                    (fd - profile.value(s)).abs() < 10.0 * h * h,
                    "{} at {s}: {fd} vs {}",
                    profile.label(),
                    profile.value(s)
                );
            }
        }
    }

    #[test]
    fn profile_constructor_validation() {
        assert!(AlphaProfile::monomial(0).is_err());
        assert!(AlphaProfile::monomial_with(2, 1.0).is_err());
        assert!(AlphaProfile::exp_flat_with(-1.0).is_err());
        assert!(AlphaProfile::exp_flat_with(1.2).is_ok());
    }

    #[test]
    fn family_dimension_rules() {
        let a = AlphaProfile::exp_flat();
        assert!(MetricPatch::new(Family::ThreeD, 4, a.clone()).is_err());
        assert!(MetricPatch::new(Family::OddFocus, 4, a.clone()).is_err());
        assert!(MetricPatch::new(Family::EvenFocus, 5, a.clone()).is_err());
        assert!(MetricPatch::new(Family::EvenFocus, 2, a.clone()).is_err());
        assert!(MetricPatch::new(Family::Euclidean, 1, a).is_err());
    }

    #[test]
    fn coupling_layout_matches_families() {
        let p = MetricPatch::odd_focus(5, AlphaProfile::monomial(2).unwrap()).unwrap();
        assert_eq!(p.coupling_index(), Some(2));
        assert_eq!(p.pairs(), &[(1, 3), (0, 4)]);
        let q = MetricPatch::even_focus(6, AlphaProfile::exp_flat()).unwrap();
        assert_eq!(q.coupling_index(), Some(3));
        assert_eq!(q.pairs(), &[(1, 4), (0, 5)]);
        let r = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        assert_eq!(r.coupling_index(), Some(1));
        assert_eq!(r.pairs(), &[(0, 2)]);
    }

    #[test]
    fn cometric_examples() {
        let flat = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        let g = flat.cometric(&[0.1, 0.3, -0.2]).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));

        let lin = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let g = lin.cometric(&[0.0, 0.5, 0.0]).unwrap();
        assert_eq!(g[(0, 2)], 0.5);
        assert_eq!(g[(2, 0)], 0.5);
        for i in 0..3 {
            assert_eq!(g[(i, i)], 1.0);
        }

        let odd = MetricPatch::odd_focus(5, AlphaProfile::monomial(2).unwrap()).unwrap();
        let g = odd.cometric(&[0.0, 0.0, 0.1, 0.0, 0.0]).unwrap();
        assert_relative_eq!(g[(1, 3)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(g[(0, 4)], 0.01, epsilon = 1e-15);
        assert_eq!(g[(0, 3)], 0.0);
    }

    #[test]
    fn cometric_rejects_points_outside_domain() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        assert!(matches!(p.cometric(&[0.0, 0.8, 0.0]), Err(LabError::Domain(_))));
        assert!(matches!(p.cometric(&[1.5, 0.0, 0.0]), Err(LabError::Domain(_))));
        assert!(matches!(p.cometric(&[0.0, 0.0]), Err(LabError::Domain(_))));
    }

    #[test]
    fn metric_examples() {
        let p = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let g = p.metric(&[0.0, 0.5, 0.0]).unwrap();
        // independent oracle: LU inverse of the cometric
        let inv = p.cometric(&[0.0, 0.5, 0.0]).unwrap().try_inverse().unwrap();
        assert_relative_eq!(g[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(g[(0, 2)], -2.0 / 3.0, epsilon = 1e-14);
        assert!((g.clone() - inv).amax() < 1e-14);
        assert!(matches!(p.metric_from_alpha(1.0), Err(LabError::Singular { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let flat = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        assert_relative_eq!(flat.hamiltonian(&[0.0, 0.2, 0.0], &[3.0, 4.0, 0.0]).unwrap(), 5.0);
        let lin = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let p = lin.hamiltonian(&[0.0, 0.5, 0.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(p, 3.0f64.sqrt(), epsilon = 1e-15);
        assert_eq!(lin.hamiltonian(&[0.0, 0.5, 0.0], &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn volume_density_examples() {
        let flat = MetricPatch::three_d(AlphaProfile::exp_flat()).unwrap();
        assert_eq!(flat.volume_density(&[0.0, 0.4, 0.0]).unwrap(), 1.0);
        // α = 0.6 from a monomial k = 1 at x2 = 0.6
        let lin = MetricPatch::three_d(AlphaProfile::monomial(1).unwrap()).unwrap();
        let x = [0.0, 0.6, 0.0];
        let det = lin.metric(&x).unwrap().determinant();
        assert_relative_eq!(lin.volume_density(&x).unwrap(), 1.25, epsilon = 1e-14);
        assert_relative_eq!(det.sqrt(), 1.25, epsilon = 1e-14);

        let odd = MetricPatch::odd_focus(5, AlphaProfile::monomial(1).unwrap()).unwrap();
        let y = [0.0, 0.0, 0.5, 0.0, 0.0];
        let det = odd.metric(&y).unwrap().determinant();
        assert_relative_eq!(odd.volume_density(&y).unwrap(), 1.0 / 0.75, epsilon = 1e-14);
        assert_relative_eq!(det.sqrt(), 1.0 / 0.75, epsilon = 1e-13);
    }
}
