//! Lloyd's k-means with k-means++ seeding.
//!
//! Points are processed in a canonical (lexicographically sorted) order, so
//! seeding and every centroid sum see the same sequence of values no matter
//! how the caller ordered its rows. Reordering the input permutes the
//! assignments and leaves centroids and inertia bitwise unchanged.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// k × d'
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Mean squared distance of points to their assigned centroid.
    pub inertia: f64,
    /// Lloyd update steps performed.
    pub iterations: usize,
    /// Inertia after seeding and after every update step.
    pub inertia_trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(point: ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Maps every point to its nearest centroid by squared Euclidean distance,
/// breaking ties toward the lowest centroid index.
pub fn assign(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<Vec<usize>> {
    if centroids.nrows() == 0 {
        return Err(Error::InvalidArgument("no centroids".into()));
    }
    if points.ncols() != centroids.ncols() {
        return Err(Error::Shape(format!(
            "points have {} columns, centroids have {}",
            points.ncols(),
            centroids.ncols()
        )));
    }
    Ok(points.rows().into_iter().map(|p| nearest(p, centroids).0).collect())
}

fn canonical_order(points: ArrayView2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.nrows()).collect();
    order.sort_by(|&a, &b| {
        points
            .row(a)
            .iter()
            .zip(points.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn seed_plus_plus(points: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target unreached; fall back to the last
            // point with positive weight
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centroids
}

fn assign_with_dist(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    points.rows().into_iter().map(|p| nearest(p, centroids)).unzip()
}

/// Clusters `points` (N × d') into `k` groups.
pub fn kmeans(points: ArrayView2<f64>, k: usize, config: KMeansConfig, rng: &mut Rng) -> Result<ClusteringResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("k-means input contains non-finite values".into()));
    }

    let order = canonical_order(points);
    let sorted = points.select(ndarray::Axis(0), &order);
    let pts = sorted.view();
    let dim = pts.ncols();

    let mut centroids = seed_plus_plus(pts, k, rng);
    let (mut labels, mut dist) = assign_with_dist(pts, centroids.view());
    let mut inertia = dist.iter().sum::<f64>() / n as f64;
    let mut trace = vec![inertia];
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &pts.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mut row = centroids.row_mut(c);
                row.assign(&sums.row(c));
                row.mapv_inplace(|v| v / count as f64);
            } else {
                // reseed onto the point farthest from its centroid; lowest
                // canonical index wins ties
                let far = dist
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                centroids.row_mut(c).assign(&pts.row(far));
                dist[far] = 0.0;
            }
        }

        let (new_labels, new_dist) = assign_with_dist(pts, centroids.view());
        let new_inertia = new_dist.iter().sum::<f64>() / n as f64;
        trace.push(new_inertia);
        iterations = it;
        let unchanged = new_labels == labels;
        let rel_change = if inertia > 0.0 {
            (inertia - new_inertia) / inertia
        } else {
            0.0
        };
        labels = new_labels;
        dist = new_dist;
        inertia = new_inertia;
        if unchanged || rel_change < config.tol {
            break;
        }
    }

    let mut assignments = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = labels[pos];
    }
    Ok(ClusteringResult {
        centroids,
        assignments,
        inertia,
        iterations,
        inertia_trace: trace,
    })
}
