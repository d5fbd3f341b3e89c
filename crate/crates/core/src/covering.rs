//! ε-nets and covering-number based intrinsic dimension estimates.
//!
//! A set `S` is an ε-net of a cloud when every point lies within Euclidean
//! distance ε of some member of `S`. Greedy farthest-point traversal yields a
//! certified net whose centers are pairwise more than ε apart, so `|S|` is at
//! most the ε-packing number of the cloud (and hence at most `N_{ε/2}`).

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Clouds larger than this are rejected to keep traversal cost bounded.
pub const MAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    radius: f64,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(invalid("point cloud is empty"));
        }
        if n > MAX_POINTS {
            return Err(invalid(format!("point cloud has {n} points, limit is {MAX_POINTS}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("point cloud has non-finite coordinates"));
        }
        let radius = points.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        Ok(Self { points, radius })
    }

    /// Headerless CSV, one point per row.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut flat = Vec::new();
        let mut dim = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let before = flat.len();
            for field in record.iter() {
                let v: f64 = field
                    .parse()
                    .map_err(|e| invalid(format!("{}: row {}: {e}", path.display(), line + 1)))?;
                flat.push(v);
            }
            let d = flat.len() - before;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => return Err(Error::DimensionMismatch { expected, got: d }),
                _ => {}
            }
        }
        let d = dim.ok_or_else(|| invalid(format!("{}: no points", path.display())))?;
        let points = Array2::from_shape_vec((flat.len() / d, d), flat).map_err(|e| invalid(e.to_string()))?;
        Self::new(points)
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Largest row norm.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Same points with `extra` zero coordinates appended.
    pub fn padded(&self, extra: usize) -> Self {
        let (n, d) = self.points.dim();
        let mut points = Array2::zeros((n, d + extra));
        points.slice_mut(ndarray::s![.., ..d]).assign(&self.points);
        Self { points, radius: self.radius }
    }
}

fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of a greedy traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonNet {
    /// Indices into the cloud, in selection order.
    pub indices: Vec<usize>,
    pub eps: f64,
    /// Largest distance from a cloud point to its nearest center.
    pub cover_radius: f64,
}

impl EpsilonNet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Farthest-point traversal starting at index 0; ties go to the lowest
/// index. Stops as soon as every point is within `eps` of a center.
pub fn greedy_epsilon_net(cloud: &PointCloud, eps: f64) -> Result<EpsilonNet> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let pts = cloud.points.view();
    let eps2 = eps * eps;
    let mut nearest: Vec<f64> = vec![f64::INFINITY; cloud.len()];
    let mut indices = Vec::new();
    let mut next = 0;
    loop {
        indices.push(next);
        let center = pts.row(next);
        nearest.par_iter_mut().enumerate().for_each(|(i, d)| {
            let cand = dist2(pts.row(i), center);
            if cand < *d {
                *d = cand;
            }
        });
        let (far_idx, far_d2) = nearest
            .par_iter()
            .enumerate()
            .map(|(i, d)| (i, *d))
            .reduce(|| (usize::MAX, f64::NEG_INFINITY), |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            });
        if far_d2 <= eps2 {
            return Ok(EpsilonNet { indices, eps, cover_radius: far_d2.max(0.0).sqrt() });
        }
        next = far_idx;
    }
}

/// `log |greedy net at eps = T^{-c_eps}| / (c_cover ln T)`.
pub fn intrinsic_dim_estimate(cloud: &PointCloud, steps: usize, c_eps: f64, c_cover: f64) -> Result<f64> {
    Ok(intrinsic_dim_with_net(cloud, steps, c_eps, c_cover)?.0)
}

/// As [`intrinsic_dim_estimate`], also returning the net.
pub fn intrinsic_dim_with_net(cloud: &PointCloud, steps: usize, c_eps: f64, c_cover: f64) -> Result<(f64, EpsilonNet)> {
    if steps < 2 {
        return Err(invalid(format!("T must be at least 2, got {steps}")));
    }
    if !(c_eps > 0.0) || !(c_cover > 0.0) {
        return Err(invalid(format!("c_eps and C_cover must be positive, got {c_eps}, {c_cover}")));
    }
    let log_t = (steps as f64).ln();
    let eps = (-c_eps * log_t).exp();
    let net = greedy_epsilon_net(cloud, eps)?;
    Ok(((net.len() as f64).ln() / (c_cover * log_t), net))
}

/// Brute-force maximum distance from any cloud point to the given centers.
pub fn max_distance_to_centers(cloud: &PointCloud, centers: &[usize]) -> f64 {
    let pts = cloud.points.view();
    pts.rows()
        .into_iter()
        .map(|p| centers.iter().map(|&c| dist2(p, pts.row(c))).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
        .sqrt()
}

/// Regular grid on `[0, 1]^r` with `side` points per axis, embedded in the
/// first `r` coordinates of `R^d`.
pub fn grid_cloud(r: usize, side: usize, d: usize) -> Result<PointCloud> {
    if r == 0 || r > d || side == 0 {
        return Err(invalid(format!("grid needs 1 <= r <= d and side >= 1, got r={r}, side={side}, d={d}")));
    }
    let n = side.checked_pow(r as u32).filter(|n| *n <= MAX_POINTS).ok_or_else(|| invalid("grid too large"))?;
    let step = if side > 1 { 1.0 / (side - 1) as f64 } else { 0.0 };
    let mut points = Array2::zeros((n, d));
    for (i, mut row) in points.rows_mut().into_iter().enumerate() {
        let mut rest = i;
        for c in 0..r {
            row[c] = (rest % side) as f64 * step;
            rest /= side;
        }
    }
    PointCloud::new(points)
}
