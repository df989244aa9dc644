//! δ-tubes around sampled geodesic segments and Monte-Carlo averages over them.
//!
//! A tube is the set of points whose chart distance to the path polyline is
//! at most δ. Uniform samples are drawn by rejection from a union of oriented
//! boxes, one per run of consecutive segments ("chunk"). A proposal from
//! chunk `c` is kept only if its nearest segment belongs to `c`, so every
//! point of the tube is produced by exactly one box and the accepted samples
//! are exactly uniform on the tube.

use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::geodesic::GeodesicPath;
use crate::metric::MetricPatch;

/// Attempts allowed per requested accepted sample before giving up.
const MAX_ATTEMPT_FACTOR: usize = 50;

#[derive(Clone, Debug)]
struct Chunk {
    /// Segment `s` joins vertices `s` and `s + 1`.
    segments: std::ops::Range<usize>,
    origin: Vec<f64>,
    /// Orthonormal frame, first axis along the chunk chord.
    frame: Vec<Vec<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    volume: f64,
    center: Vec<f64>,
    radius: f64,
}

#[derive(Clone, Debug)]
pub struct Tube {
    path: GeodesicPath,
    delta: f64,
    r: f64,
    vertices: Vec<Vec<f64>>,
    chunks: Vec<Chunk>,
    cumulative: Vec<f64>,
    box_volume: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormal_frame(first: &[f64]) -> Vec<Vec<f64>> {
    let n = first.len();
    let mut frame: Vec<Vec<f64>> = vec![first.to_vec()];
    for k in 0..n {
        if frame.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        for f in &frame {
            let d = dot(&e, f);
            for i in 0..n {
                e[i] -= d * f[i];
            }
        }
        let norm = dot(&e, &e).sqrt();
        if norm > 1e-6 {
            frame.push(e.into_iter().map(|v| v / norm).collect());
        }
    }
    frame
}

/// Squared distance from `y` to the segment `[a, b]`.
#[inline]
fn segment_dist_sq(y: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ay_ab = 0.0;
    for i in 0..y.len() {
        let ab = b[i] - a[i];
        ab2 += ab * ab;
        ay_ab += (y[i] - a[i]) * ab;
    }
    let t = if ab2 > 0.0 { (ay_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut d2 = 0.0;
    for i in 0..y.len() {
        let p = a[i] + t * (b[i] - a[i]);
        d2 += (y[i] - p) * (y[i] - p);
    }
    d2
}

impl Tube {
    /// Tube of width `delta` around the whole of `path`.
    pub fn new(path: GeodesicPath, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(LabError::domain("tube width must be positive"));
        }
        if path.len() < 2 {
            return Err(LabError::domain("tube needs a path with at least two samples"));
        }
        let r = path.t_end() - path.t0;
        // polyline vertices: coarser than the integration lattice, but with a
        // sagitta far below δ
        let spacing = (delta / 2.0).clamp(path.step, 0.02);
        let stride = ((spacing / path.step).floor() as usize).max(1);
        let mut vertices: Vec<Vec<f64>> = path.samples.iter().step_by(stride).map(|s| s.x.clone()).collect();
        if (path.len() - 1) % stride != 0 {
            vertices.push(path.last().x.clone());
        }
        let nseg = vertices.len() - 1;
        let chunk_len = (2.0 * delta).sqrt().min(0.25);
        let seg_len = stride as f64 * path.step;
        let per_chunk = ((chunk_len / seg_len).round() as usize).max(2);
        let n = vertices[0].len();

        let mut chunks = Vec::new();
        let mut start = 0;
        while start < nseg {
            let end = (start + per_chunk).min(nseg);
            let pts = &vertices[start..=end];
            let origin = pts[0].clone();
            let mut axis: Vec<f64> = pts[pts.len() - 1].iter().zip(&origin).map(|(a, b)| a - b).collect();
            let len = dot(&axis, &axis).sqrt();
            if len < 1e-14 {
                axis = vec![0.0; n];
                axis[0] = 1.0;
            } else {
                axis.iter_mut().for_each(|v| *v /= len);
            }
            let frame = orthonormal_frame(&axis);
            let mut lo = vec![f64::INFINITY; n];
            let mut hi = vec![f64::NEG_INFINITY; n];
            for p in pts {
                let rel: Vec<f64> = p.iter().zip(&origin).map(|(a, b)| a - b).collect();
                for (k, e) in frame.iter().enumerate() {
                    let c = dot(&rel, e);
                    lo[k] = lo[k].min(c);
                    hi[k] = hi[k].max(c);
                }
            }
            for k in 0..n {
                lo[k] -= delta;
                hi[k] += delta;
            }
            let volume = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
            let mut center = vec![0.0; n];
            for p in pts {
                for i in 0..n {
                    center[i] += p[i] / pts.len() as f64;
                }
            }
            let radius = pts
                .iter()
                .map(|p| p.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            chunks.push(Chunk {
                segments: start..end,
                origin,
                frame,
                lo,
                hi,
                volume,
                center,
                radius,
            });
            start = end;
        }
        let mut cumulative = Vec::with_capacity(chunks.len());
        let mut acc = 0.0;
        for c in &chunks {
            acc += c.volume;
            cumulative.push(acc);
        }
        Ok(Tube {
            path,
            delta,
            r,
            vertices,
            chunks,
            cumulative,
            box_volume: acc,
        })
    }

    pub fn path(&self) -> &GeodesicPath {
        &self.path
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Parameter length of the underlying path.
    pub fn length(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Nearest chunk index and squared distance, restricted to chunks that
    /// can be within δ.
    fn nearest(&self, y: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (ci, c) in self.chunks.iter().enumerate() {
            let dc: f64 = y.iter().zip(&c.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dc > c.radius + self.delta {
                continue;
            }
            for s in c.segments.clone() {
                let d2 = segment_dist_sq(y, &self.vertices[s], &self.vertices[s + 1]);
                if best.is_none_or(|(_, b)| d2 < b) {
                    best = Some((ci, d2));
                }
            }
        }
        best
    }

    /// Chart distance from `y` to the polyline, if it is at most δ.
    pub fn distance_within(&self, y: &[f64]) -> Option<f64> {
        self.nearest(y)
            .map(|(_, d2)| d2.sqrt())
            .filter(|d| *d <= self.delta)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.distance_within(y).is_some()
    }

    /// Chart distance from `y` to the full polyline.
    pub fn axis_distance(&self, y: &[f64]) -> f64 {
        (0..self.vertices.len() - 1)
            .map(|s| segment_dist_sq(y, &self.vertices[s], &self.vertices[s + 1]))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    pub fn polyline(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    /// Volume of the union of proposal boxes counted with multiplicity.
    pub fn proposal_volume(&self) -> f64 {
        self.box_volume
    }

    /// One proposal: returns the point and whether it was accepted.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> bool {
        let u: f64 = rng.gen::<f64>() * self.box_volume;
        let ci = self.cumulative.partition_point(|&c| c <= u).min(self.chunks.len() - 1);
        let c = &self.chunks[ci];
        out.copy_from_slice(&c.origin);
        for (k, e) in c.frame.iter().enumerate() {
            let coef = c.lo[k] + rng.gen::<f64>() * (c.hi[k] - c.lo[k]);
            for i in 0..out.len() {
                out[i] += coef * e[i];
            }
        }
        match self.nearest(out) {
            Some((owner, d2)) => owner == ci && d2 <= self.delta * self.delta,
            None => false,
        }
    }

    /// Draws up to `count` uniform points of the tube; returns them with the
    /// number of proposals used.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> (Vec<Vec<f64>>, usize) {
        let mut points = Vec::with_capacity(count);
        let mut attempts = 0;
        let mut y = vec![0.0; self.dim()];
        let limit = count.saturating_mul(MAX_ATTEMPT_FACTOR).max(1);
        while points.len() < count && attempts < limit {
            attempts += 1;
            if self.propose(rng, &mut y) {
                points.push(y.clone());
            }
        }
        (points, attempts)
    }

    /// Monte-Carlo chart volume of the tube.
    pub fn measure<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> Result<f64> {
        let (pts, attempts) = self.sample(rng, samples);
        if pts.is_empty() {
            return Err(LabError::DegenerateTube);
        }
        Ok(self.box_volume * pts.len() as f64 / attempts as f64)
    }

    /// Volume `v_{n−1} δ^{n−1} r` of the straight cylinder with the same length and width.
    pub fn cylinder_volume(&self) -> f64 {
        unit_ball_volume(self.dim() - 1) * self.delta.powi(self.dim() as i32 - 1) * self.r
    }
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Ratio estimate of a density-weighted tube average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TubeAverage {
    pub value: f64,
    pub stderr: f64,
    pub accepted: usize,
    pub attempts: usize,
}

/// `∫_T |f| dV / ∫_T dV` with `dV = volume_density · dx`, from `samples`
/// uniform tube points.
pub fn tube_average<R, F>(patch: &MetricPatch, tube: &Tube, f: &F, samples: usize, rng: &mut R) -> Result<TubeAverage>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let (points, attempts) = tube.sample(rng, samples);
    if points.is_empty() {
        return Err(LabError::DegenerateTube);
    }
    let mut sw = 0.0;
    let mut swf = 0.0;
    let mut values = Vec::with_capacity(points.len());
    for y in &points {
        let w = patch.volume_density_unchecked(y);
        let v = f(y).abs();
        sw += w;
        swf += w * v;
        values.push((w, v));
    }
    let mean = swf / sw;
    let var: f64 = values.iter().map(|(w, v)| w * w * (v - mean) * (v - mean)).sum();
    Ok(TubeAverage {
        value: mean,
        stderr: var.sqrt() / sw,
        accepted: points.len(),
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{flow, PhasePoint, DEFAULT_STEP};
    use crate::rng::item_rng;
    use std::f64::consts::PI;

    fn vertical_tube(delta: f64) -> (MetricPatch, Tube) {
        let p = MetricPatch::euclidean(3).unwrap();
        let start = PhasePoint::new(vec![0.0, -0.5, 0.0], vec![0.0, 1.0, 0.0]);
        let path = flow(&p, &start, (0.0, 1.0), DEFAULT_STEP).unwrap();
        (p, Tube::new(path, delta).unwrap())
    }

    #[test]
    fn constant_fields() {
        let (p, tube) = vertical_tube(0.05);
        let mut rng = item_rng(1, 0);
        assert_eq!(tube_average(&p, &tube, &|_: &[f64]| 1.0, 500, &mut rng).unwrap().value, 1.0);
        assert_eq!(tube_average(&p, &tube, &|_: &[f64]| 0.0, 500, &mut rng).unwrap().value, 0.0);
    }

    #[test]
    fn slab_fraction_matches_geometry() {
        let delta = 0.1;
        let (p, tube) = vertical_tube(delta);
        let mut rng = item_rng(2, 0);
        let avg = tube_average(&p, &tube, &|y: &[f64]| f64::from(y[2].abs() < 0.05), 40_000, &mut rng).unwrap();
        // disc of radius δ cut to |x3| < δ/2, plus two half-ball caps cut the same way
        let disc_fraction = 1.0 / 3.0 + 3f64.sqrt() / (2.0 * PI);
        let ball_fraction = 11.0 / 16.0;
        let cyl = PI * delta * delta;
        let caps = 4.0 / 3.0 * PI * delta.powi(3);
        let expected = (cyl * disc_fraction + caps * ball_fraction) / (cyl + caps);
        assert!((avg.value - expected).abs() < 4.0 * avg.stderr + 1e-3, "{} vs {expected}", avg.value);
    }

    #[test]
    fn measure_close_to_cylinder() {
        let (_, tube) = vertical_tube(0.05);
        let mut rng = item_rng(3, 0);
        let m = tube.measure(&mut rng, 20_000).unwrap();
        let exact = PI * 0.05f64.powi(2) * 1.0 + 4.0 / 3.0 * PI * 0.05f64.powi(3);
        assert!((m - exact).abs() / exact < 0.03, "{m} vs {exact}");
        assert!(m > tube.cylinder_volume() / 2.0 && m < 2.0 * tube.cylinder_volume());
    }

    #[test]
    fn membership_is_distance_to_polyline() {
        let (_, tube) = vertical_tube(0.05);
        assert!(tube.contains(&[0.04, 0.0, 0.0]));
        assert!(!tube.contains(&[0.04, 0.0, 0.04]));
        assert!(tube.contains(&[0.0, 0.54, 0.0]));
        assert!(!tube.contains(&[0.0, 0.56, 0.0]));
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * PI).abs() < 1e-15);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }
}
