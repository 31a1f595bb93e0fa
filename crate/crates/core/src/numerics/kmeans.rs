//! k-means with k-means++ seeding and best-of-n restarts.

use super::rng::RandomSource;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its assigned center.
    pub inertia: f64,
    pub restarts_run: usize,
    /// Index of the restart that produced this result.
    pub best_restart: usize,
}

/// Lowest-inertia clustering over `restarts` independent k-means++ runs.
///
/// Restart `r` draws from `rng.substream(r)`, so the first `r` restarts are the
/// same whatever the total count. Ties in inertia go to the earliest restart.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &RandomSource,
) -> Result<KMeansResult> {
    kmeans_with_cap(points, k, restarts, DEFAULT_MAX_ITERATIONS, rng)
}

pub fn kmeans_with_cap(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iterations: usize,
    rng: &RandomSource,
) -> Result<KMeansResult> {
    let m = points.len();
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if m < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k = {k} points, got {m}"
        )));
    }
    if restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("k-means points have inconsistent dimensions"));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("k-means points have non-finite coordinates"));
    }

    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut stream = rng.substream(r as u64);
        let (labels, centers, inertia) = lloyd(points, k, max_iterations, &mut stream);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                labels,
                centers,
                inertia,
                restarts_run: restarts,
                best_restart: r,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    max_iterations: usize,
    rng: &mut RandomSource,
) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let mut centers = seed_plus_plus(points, k, rng);
    let mut labels = assign(points, &centers);
    for _ in 0..max_iterations {
        repair_empty(points, &mut labels, &mut centers);
        centers = means(points, &labels, k);
        let next = assign(points, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    repair_empty(points, &mut labels, &mut centers);
    let centers = means(points, &labels, k);
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    (labels, centers, inertia)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut chosen = vec![false; m];
    let first = rng.below(m);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point coincides with a center
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest center per point; ties go to the lowest center index.
fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = sq_dist(p, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Hands each empty cluster the point farthest from its own center, taken from a
/// cluster that keeps at least one member.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[labels[i]]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("m >= k guarantees a donor cluster");
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        centers[empty] = points[i].clone();
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n as f64);
    }
    sums
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
