//! k-means grouping of releases with k-means++ seeding and silhouette-based
//! choice of k.

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Kind, Severity};
use crate::weighting::WeightedItem;

pub type Point = Vec<f64>;

/// Feature layout: counts per kind, counts per severity, total |weight|,
/// item count.
pub const FEATURE_DIM: usize = Kind::ALL.len() + Severity::ALL.len() + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseFeatures {
    pub version: String,
    pub vector: Point,
}

pub fn release_features(items: &[&WeightedItem]) -> Point {
    let mut v = vec![0.0; FEATURE_DIM];
    for item in items {
        v[item.kind as usize] += 1.0;
        v[Kind::ALL.len() + item.severity.index()] += 1.0;
        v[FEATURE_DIM - 2] += item.weight.abs();
    }
    v[FEATURE_DIM - 1] = items.len() as f64;
    v
}

/// Per-dimension z-scoring. Dimensions that are constant over the fitting
/// data are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Point]) -> Result<Self> {
        let dim = check_dims(points)?;
        let n = points.len() as f64;
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for d in 0..dim {
            let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 1e-12 * (1.0 + mean.abs()) {
                kept.push(d);
                means.push(mean);
                stds.push(std);
            }
        }
        Ok(Standardizer { kept, means, stds })
    }

    pub fn transform(&self, point: &[f64]) -> Point {
        self.kept
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&d, (m, s))| (point[d] - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Point>,
    /// Cluster index per fitted point, in input order.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn check_dims(points: &[Point]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::InsufficientData("no points to cluster".into()))?;
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Precondition("points differ in dimension".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("non-finite coordinate".into()));
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Point], p: &[f64]) -> (usize, f64) {
    let mut best = (0, sq_dist(&centroids[0], p));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can land on a zero-weight tail entry
            if d2[chosen] == 0.0 {
                chosen = d2
                    .iter()
                    .rposition(|w| *w > 0.0)
                    .expect("total > 0 implies a positive weight");
            }
            chosen
        } else {
            // all remaining points coincide with a centroid
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(points: &[Point], centroids: &[Point]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let (i, d) = nearest(centroids, p);
            inertia += d;
            i
        })
        .collect();
    (assignments, inertia)
}

fn recompute(points: &[Point], assignments: &mut [usize], k: usize, dim: usize) -> Vec<Point> {
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(assignments.iter()) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let centroids: Vec<Point> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|x| x / c.max(1) as f64).collect())
            .collect();
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centroids;
        };
        // Move the point farthest from its centroid (among clusters that can
        // spare one) into the empty cluster.
        let donor = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("k <= n leaves a cluster with two or more points");
        assignments[donor] = empty;
    }
}

pub fn kmeans_fit(points: &[Point], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    kmeans_fit_traced(points, k, seed, max_iter).map(|(model, _)| model)
}

/// Like [`kmeans_fit`], also returning the inertia after every assignment
/// step.
pub fn kmeans_fit_traced(
    points: &[Point],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(ClusterModel, Vec<f64>)> {
    let dim = check_dims(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::Precondition(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let (mut assignments, first) = assign_all(points, &centroids);
    let mut trace = vec![first];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = recompute(points, &mut assignments, k, dim);
        let (next, inertia) = assign_all(points, &centroids);
        trace.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    centroids = recompute(points, &mut assignments, k, dim);
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Ok((
        ClusterModel {
            k,
            centroids,
            assignments,
            inertia,
            iterations,
        },
        trace,
    ))
}

pub fn assign_cluster(model: &ClusterModel, point: &[f64]) -> Result<usize> {
    let dim = model.centroids.first().map_or(0, Vec::len);
    if point.len() != dim {
        return Err(Error::Precondition(format!(
            "point has dimension {}, model has {dim}",
            point.len()
        )));
    }
    Ok(nearest(&model.centroids, point).0)
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
pub fn mean_silhouette(points: &[Point], assignments: &[usize], k: usize) -> f64 {
    let n = points.len();
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| sq_dist(a, b).sqrt()).collect())
        .collect();
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let own = assignments[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                sums[assignments[j]] += dist[i][j];
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .sum();
    total / n as f64
}

pub const DEFAULT_MAX_ITER: usize = 300;

/// The k in `2..=min(k_max, n - 1)` with the highest mean silhouette;
/// ties keep the smaller k.
pub fn choose_k(points: &[Point], k_max: usize, seed: u64) -> Result<usize> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "choosing k needs at least 3 points, got {}",
            points.len()
        )));
    }
    if k_max < 2 {
        return Err(Error::Precondition("k_max must be at least 2".into()));
    }
    let upper = k_max.min(points.len() - 1);
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..=upper {
        let model = kmeans_fit(points, k, seed, DEFAULT_MAX_ITER)?;
        let s = mean_silhouette(points, &model.assignments, k);
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

/// Standardizer plus a k-means model fitted in standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseClusterer {
    pub standardizer: Standardizer,
    pub model: ClusterModel,
    pub versions: Vec<String>,
}

impl ReleaseClusterer {
    /// Fits on raw release features. With `k = None` the silhouette picks k
    /// from `2..=k_max`.
    pub fn fit(
        features: &[ReleaseFeatures],
        k: Option<usize>,
        k_max: usize,
        seed: u64,
    ) -> Result<Self> {
        let raw: Vec<Point> = features.iter().map(|f| f.vector.clone()).collect();
        let standardizer = Standardizer::fit(&raw)?;
        let points: Vec<Point> = raw.iter().map(|p| standardizer.transform(p)).collect();
        let k = match k {
            Some(k) => k,
            None => choose_k(&points, k_max, seed)?,
        };
        let model = kmeans_fit(&points, k, seed, DEFAULT_MAX_ITER)?;
        Ok(ReleaseClusterer {
            standardizer,
            model,
            versions: features.iter().map(|f| f.version.clone()).collect(),
        })
    }

    pub fn assign(&self, raw: &[f64]) -> Result<usize> {
        assign_cluster(&self.model, &self.standardizer.transform(raw))
    }
}
