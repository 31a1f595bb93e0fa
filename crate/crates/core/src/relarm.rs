//! Relative PCA attribute rating: min-max normalization, l1-normalized principal
//! components, ranking functions, the feature map into ranking-function space,
//! and clustering with projections onto the rating vector.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Direction};
use crate::error::{Error, Result};
use crate::numerics::{dot, eig_symmetric, kmeans, RandomSource, SymmetricMatrix};

/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const ZERO_VARIANCE_RELATIVE: f64 = 1e-12;
/// Slack on the cumulative variance fraction when picking `d`.
const VARIANCE_TARGET_SLACK: f64 = 1e-12;

/// M×N indicators scaled to [0, 1], oriented so that 1 is always best.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    entity_ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl NormalizedMatrix {
    pub fn new(entity_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if entity_ids.len() != rows.len() {
            return Err(Error::invalid(format!(
                "{} entity ids for {} rows",
                entity_ids.len(),
                rows.len()
            )));
        }
        let n = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || n == 0 {
            return Err(Error::invalid("normalized matrix must be non-empty"));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("normalized matrix rows differ in length"));
        }
        if rows.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::invalid("normalized values must lie in [0, 1]"));
        }
        Ok(NormalizedMatrix { entity_ids, rows })
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn n_entities(&self) -> usize {
        self.rows.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.rows[0].len()
    }
}

/// Min-max scaling per indicator; negative indicators are reversed.
pub fn normalize(ds: &Dataset) -> Result<NormalizedMatrix> {
    if ds.missing_count() > 0 {
        return Err(Error::invalid(format!(
            "dataset has {} missing values; impute before normalizing",
            ds.missing_count()
        )));
    }
    let records = ds.records();
    let m = records.len();
    let mut rows = vec![vec![0.0; ds.schema().len()]; m];
    for (j, ind) in ds.schema().indicators().iter().enumerate() {
        let col: Vec<f64> = records.iter().map(|r| r.values[j].unwrap()).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span <= 0.0 {
            return Err(Error::DegenerateColumn(ind.name.clone()));
        }
        for (row, p) in rows.iter_mut().zip(&col) {
            row[j] = match ind.direction {
                Direction::Positive => (p - lo) / span,
                Direction::Negative => (hi - p) / span,
            };
        }
    }
    NormalizedMatrix::new(ds.entity_ids(), rows)
}

/// Principal components of the normalized set, each rescaled to unit l1 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// `components[k]` is the k-th signed component w_k (length N, unit l1 norm).
    pub components: Vec<Vec<f64>>,
    /// Component variances, descending.
    pub variances: Vec<f64>,
    /// Number of retained components.
    pub d: usize,
    /// N×d matrix of |w_kp| over retained components.
    pub weights: Vec<Vec<f64>>,
    /// Variances of the retained components.
    pub rating_vector: Vec<f64>,
}

impl PcaBasis {
    pub fn n_indicators(&self) -> usize {
        self.weights.len()
    }

    /// |w_p| for the retained component `p` (0-based).
    pub fn ranking_vector(&self, p: usize) -> Result<Vec<f64>> {
        self.check_component(p)?;
        Ok(self.components[p].iter().map(|w| w.abs()).collect())
    }

    pub fn explained_fraction(&self) -> f64 {
        let total: f64 = self.variances.iter().sum();
        self.rating_vector.iter().sum::<f64>() / total
    }

    fn check_component(&self, p: usize) -> Result<()> {
        if p >= self.d {
            return Err(Error::invalid(format!(
                "component index {p} out of range, {} components retained",
                self.d
            )));
        }
        Ok(())
    }

    fn check_row(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.n_indicators() {
            return Err(Error::invalid(format!(
                "row has {} indicators, basis was fitted on {}",
                b.len(),
                self.n_indicators()
            )));
        }
        Ok(())
    }
}

/// Sample covariance (divisor M−1) of mean-centered columns.
pub fn covariance(b: &NormalizedMatrix) -> Result<SymmetricMatrix> {
    let m = b.n_entities();
    if m < 2 {
        return Err(Error::invalid("covariance needs at least 2 entities"));
    }
    let n = b.n_indicators();
    let means: Vec<f64> = (0..n)
        .map(|j| b.rows.iter().map(|r| r[j]).sum::<f64>() / m as f64)
        .collect();
    SymmetricMatrix::from_fn(n, |i, j| {
        b.rows
            .iter()
            .map(|r| (r[i] - means[i]) * (r[j] - means[j]))
            .sum::<f64>()
            / (m - 1) as f64
    })
}

/// `d` is the smallest count whose cumulative variance fraction reaches `variance_target`.
pub fn fit_pca(b: &NormalizedMatrix, variance_target: f64) -> Result<PcaBasis> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid(format!(
            "variance target must be in (0, 1], got {variance_target}"
        )));
    }
    let eig = eig_symmetric(&covariance(b)?)?;
    let top = eig.values[0].max(0.0);
    let variances: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l <= ZERO_VARIANCE_RELATIVE * top { 0.0 } else { l })
        .collect();
    let total: f64 = variances.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("normalized data has zero total variance"));
    }
    let components: Vec<Vec<f64>> = eig
        .vectors
        .iter()
        .map(|v| {
            let l1: f64 = v.iter().map(|x| x.abs()).sum();
            v.iter().map(|x| x / l1).collect()
        })
        .collect();

    let mut d = variances.len();
    let mut cum = 0.0;
    for (k, l) in variances.iter().enumerate() {
        cum += l;
        if cum / total >= variance_target - VARIANCE_TARGET_SLACK {
            d = k + 1;
            break;
        }
    }
    let n = b.n_indicators();
    let weights = (0..n)
        .map(|row| (0..d).map(|p| components[p][row].abs()).collect())
        .collect();
    Ok(PcaBasis {
        rating_vector: variances[..d].to_vec(),
        components,
        variances,
        d,
        weights,
    })
}

/// Element-wise product of `b_i` with the signed component `p` (0-based).
pub fn relative_attribute(b_i: &[f64], basis: &PcaBasis, p: usize) -> Result<Vec<f64>> {
    basis.check_component(p)?;
    basis.check_row(b_i)?;
    Ok(b_i
        .iter()
        .zip(&basis.components[p])
        .map(|(b, w)| b * w)
        .collect())
}

/// r_p(b_i) = Σ_k b_ik |w_kp|, for the retained component `p` (0-based).
pub fn ranking_function(b_i: &[f64], basis: &PcaBasis, p: usize) -> Result<f64> {
    basis.check_component(p)?;
    basis.check_row(b_i)?;
    Ok(b_i
        .iter()
        .zip(&basis.components[p])
        .map(|(b, w)| b * w.abs())
        .sum())
}

/// Entity feature vectors in ranking-function space, one row per entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    entity_ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(entity_ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if entity_ids.len() != vectors.len() {
            return Err(Error::invalid(format!(
                "{} entity ids for {} feature vectors",
                entity_ids.len(),
                vectors.len()
            )));
        }
        let d = vectors.first().map_or(0, Vec::len);
        if vectors.is_empty() || d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("feature vectors must be non-empty and equal length"));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature vectors must be finite"));
        }
        Ok(FeatureSet { entity_ids, vectors })
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// a_i = b_i × W.
pub fn feature_map(b: &NormalizedMatrix, basis: &PcaBasis) -> Result<FeatureSet> {
    if b.n_indicators() != basis.n_indicators() {
        return Err(Error::invalid(format!(
            "matrix has {} indicators, basis was fitted on {}",
            b.n_indicators(),
            basis.n_indicators()
        )));
    }
    let vectors = b
        .rows
        .iter()
        .map(|row| {
            (0..basis.d)
                .map(|p| row.iter().zip(&basis.weights).map(|(x, w)| x * w[p]).sum())
                .collect()
        })
        .collect();
    FeatureSet::new(b.entity_ids.clone(), vectors)
}

/// Clusters with their projections onto the rating vector and the derived orderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub entity_ids: Vec<String>,
    /// Cluster index per entity.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// |CC_q · Λ| per cluster.
    pub projections: Vec<f64>,
    /// Cluster indices from highest to lowest projection.
    pub cluster_order: Vec<usize>,
    /// Rank per cluster index, 1 = highest projection.
    pub cluster_rank: Vec<usize>,
    /// |a_i · Λ| per entity.
    pub entity_projection: Vec<f64>,
    /// Rank inside the entity's cluster, 1 = highest projection.
    pub within_cluster_rank: Vec<usize>,
}

impl ClusterState {
    /// Derives projections and orderings from a fixed assignment.
    pub fn build(
        features: &FeatureSet,
        labels: Vec<usize>,
        centers: Vec<Vec<f64>>,
        rating_vector: &[f64],
    ) -> Result<Self> {
        let k = centers.len();
        if labels.len() != features.len() {
            return Err(Error::invalid("one cluster label per entity required"));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::invalid("cluster label out of range"));
        }
        if rating_vector.len() != features.dim() || centers.iter().any(|c| c.len() != features.dim()) {
            return Err(Error::invalid("cluster dimensions do not match features"));
        }
        let projections: Vec<f64> = centers.iter().map(|c| dot(c, rating_vector).abs()).collect();
        let mut cluster_order: Vec<usize> = (0..k).collect();
        cluster_order.sort_by(|&a, &b| projections[b].total_cmp(&projections[a]).then(a.cmp(&b)));
        let mut cluster_rank = vec![0; k];
        for (pos, &c) in cluster_order.iter().enumerate() {
            cluster_rank[c] = pos + 1;
        }

        let ids = features.entity_ids();
        let entity_projection: Vec<f64> = features
            .vectors()
            .iter()
            .map(|a| dot(a, rating_vector).abs())
            .collect();
        let mut within_cluster_rank = vec![0; labels.len()];
        for q in 0..k {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == q).collect();
            members.sort_by(|&a, &b| by_projection(&entity_projection, ids, a, b));
            for (pos, &i) in members.iter().enumerate() {
                within_cluster_rank[i] = pos + 1;
            }
        }
        Ok(ClusterState {
            entity_ids: ids.to_vec(),
            labels,
            centers,
            projections,
            cluster_order,
            cluster_rank,
            entity_projection,
            within_cluster_rank,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    /// Rank (1 = best) of the cluster entity `i` belongs to.
    pub fn entity_cluster_rank(&self, i: usize) -> usize {
        self.cluster_rank[self.labels[i]]
    }

    pub fn cluster_size(&self, q: usize) -> usize {
        self.labels.iter().filter(|&&l| l == q).count()
    }

    /// Checks shapes and rank permutations; used before building targets.
    pub fn check_complete(&self) -> Result<()> {
        let m = self.entity_ids.len();
        let k = self.centers.len();
        if m == 0 || k == 0 {
            return Err(Error::invalid("cluster state is empty"));
        }
        if self.labels.len() != m
            || self.entity_projection.len() != m
            || self.within_cluster_rank.len() != m
        {
            return Err(Error::invalid("cluster state per-entity fields are incomplete"));
        }
        if self.projections.len() != k || self.cluster_order.len() != k || self.cluster_rank.len() != k {
            return Err(Error::invalid("cluster state per-cluster fields are incomplete"));
        }
        if self.labels.iter().any(|&l| l >= k) {
            return Err(Error::invalid("cluster state has out-of-range labels"));
        }
        let mut ranks = self.cluster_rank.clone();
        ranks.sort_unstable();
        if ranks != (1..=k).collect::<Vec<_>>() {
            return Err(Error::invalid("cluster ranks are not a permutation of 1..k"));
        }
        for (pos, &c) in self.cluster_order.iter().enumerate() {
            if c >= k || self.cluster_rank[c] != pos + 1 {
                return Err(Error::invalid("cluster order disagrees with cluster ranks"));
            }
        }
        for q in 0..k {
            let mut r: Vec<usize> = (0..m)
                .filter(|&i| self.labels[i] == q)
                .map(|i| self.within_cluster_rank[i])
                .collect();
            r.sort_unstable();
            if r != (1..=r.len()).collect::<Vec<_>>() {
                return Err(Error::invalid(format!(
                    "within-cluster ranks of cluster {q} are not a permutation"
                )));
            }
        }
        Ok(())
    }
}

fn by_projection(proj: &[f64], ids: &[String], a: usize, b: usize) -> Ordering {
    proj[b].total_cmp(&proj[a]).then_with(|| ids[a].cmp(&ids[b]))
}

/// k-means on the feature vectors, then ordering by projection onto the rating vector.
pub fn cluster_entities(
    features: &FeatureSet,
    basis: &PcaBasis,
    k: usize,
    restarts: usize,
    rng: &RandomSource,
) -> Result<ClusterState> {
    if features.dim() != basis.d {
        return Err(Error::invalid(format!(
            "features have dimension {}, basis retains {}",
            features.dim(),
            basis.d
        )));
    }
    let km = kmeans(features.vectors(), k, restarts, rng)?;
    ClusterState::build(features, km.labels, km.centers, &basis.rating_vector)
}
