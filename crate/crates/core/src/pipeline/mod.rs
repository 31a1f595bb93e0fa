//! End-to-end yearly run: data → normalized indicators → PCA features → clusters →
//! targets → trained ranking network → scores on the 1–7 scale and ranks.

mod report;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{impute_missing, load_dataset, Dataset, IndicatorSchema};
use crate::error::{Error, Result, Stage, StageExt};
use crate::numerics::RandomSource;
use crate::ranknet::{init_model, score_all, train, NetworkConfig, RankModel};
use crate::relarm::{cluster_entities, feature_map, fit_pca, normalize, ClusterState, FeatureSet, PcaBasis};
use crate::target::{build_dynamic, build_static, TargetMatrix};

pub use report::{
    compare, emit_reports, write_comparison_files, ComparisonEntry, ComparisonReport, Direction, Reference, ReferenceEntry,
    REPORT_FILES,
};

pub const STATE_VERSION: u32 = 1;
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub clusters: usize,
    pub restarts: usize,
    pub variance_target: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub loss_tolerance: f64,
    pub seed: u64,
    /// Entities computed as usual but left out of reported ranks and comparisons.
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            clusters: 5,
            restarts: 50,
            variance_target: 0.95,
            hidden: vec![10, 10, 10],
            epochs: 500,
            loss_tolerance: 1e-7,
            seed: 0,
            exclude: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn network(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            hidden: self.hidden.clone(),
            seed: self.seed,
            epochs: self.epochs,
            loss_tolerance: self.loss_tolerance,
            ..NetworkConfig::new(input_dim)
        }
    }
}

/// Everything a later year or a comparison needs from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearState {
    pub version: u32,
    pub year_label: String,
    pub entity_ids: Vec<String>,
    pub config: RunConfig,
    pub pca: PcaBasis,
    pub features: FeatureSet,
    pub cluster_state: ClusterState,
    pub targets: TargetMatrix,
    pub loss_history: Vec<f64>,
    pub scores_raw: Vec<f64>,
    pub scores_scaled: Vec<f64>,
    /// Rank per entity, 1 = best.
    pub ranks: Vec<usize>,
}

impl YearState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: YearState = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if state.version > STATE_VERSION {
            return Err(Error::Format {
                path: path.to_owned(),
                message: format!(
                    "state version {} is newer than supported {STATE_VERSION}",
                    state.version
                ),
            });
        }
        Ok(state)
    }

    pub fn index_of(&self, entity_id: &str) -> Option<usize> {
        self.entity_ids.iter().position(|e| e == entity_id)
    }

    pub fn is_excluded(&self, entity_id: &str) -> bool {
        self.config.exclude.iter().any(|e| e == entity_id)
    }

    /// Ranks renumbered over non-excluded entities; `None` for excluded ones.
    pub fn reported_ranks(&self) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..self.entity_ids.len()).collect();
        order.sort_by_key(|&i| self.ranks[i]);
        let mut out = vec![None; self.entity_ids.len()];
        let mut next = 1;
        for i in order {
            if !self.is_excluded(&self.entity_ids[i]) {
                out[i] = Some(next);
                next += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct YearRun {
    pub state: YearState,
    pub model: RankModel,
    pub network: NetworkConfig,
}

/// s' = 1 + 6 (s − min) / (max − min).
pub fn scale_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.len() < 2 {
        return Err(Error::invalid("scaling needs at least 2 scores"));
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::DegenerateScores);
    }
    Ok(raw
        .iter()
        .map(|s| SCORE_MIN + (SCORE_MAX - SCORE_MIN) * (s - lo) / (hi - lo))
        .collect())
}

/// Rank per entity by descending score; exact ties go to the smaller entity id.
pub fn rank_by_scores(scores: &[f64], entity_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| entity_ids[a].cmp(&entity_ids[b]))
    });
    let mut ranks = vec![0; scores.len()];
    for (pos, i) in order.into_iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// Runs one year. With a previous state the targets use the movement-aware rules.
pub fn run_year(ds: &Dataset, previous: Option<&YearState>, cfg: &RunConfig) -> Result<YearRun> {
    let ds = impute_missing(ds).stage(Stage::Impute)?;
    let b = normalize(&ds).stage(Stage::Normalize)?;
    let pca = fit_pca(&b, cfg.variance_target).stage(Stage::Pca)?;
    let features = feature_map(&b, &pca).stage(Stage::Features)?;
    let rng = RandomSource::new(cfg.seed);
    let clusters = cluster_entities(&features, &pca, cfg.clusters, cfg.restarts, &rng).stage(Stage::Cluster)?;
    let targets = match previous {
        None => build_static(&clusters),
        Some(prev) => build_dynamic(&clusters, &prev.cluster_state),
    }
    .stage(Stage::Targets)?;

    let network = cfg.network(features.dim());
    let model = init_model(&network).stage(Stage::Train)?;
    let outcome = train(&model, &features, &targets, &network).stage(Stage::Train)?;
    let scores_raw = score_all(&outcome.model, &features).stage(Stage::Score)?;
    let scores_scaled = scale_scores(&scores_raw).stage(Stage::Score)?;
    let entity_ids = ds.entity_ids();
    let ranks = rank_by_scores(&scores_scaled, &entity_ids);

    Ok(YearRun {
        state: YearState {
            version: STATE_VERSION,
            year_label: ds.year_label().to_owned(),
            entity_ids,
            config: cfg.clone(),
            pca,
            features,
            cluster_state: clusters,
            targets,
            loss_history: outcome.loss_history,
            scores_raw,
            scores_scaled,
            ranks,
        },
        model: outcome.model,
        network,
    })
}

/// File-based wrapper over [`run_year`].
pub fn run_year_files(
    data: impl AsRef<Path>,
    schema: impl AsRef<Path>,
    previous: Option<&YearState>,
    year_label: Option<&str>,
    cfg: &RunConfig,
) -> Result<YearRun> {
    let schema = IndicatorSchema::load(schema).stage(Stage::Load)?;
    let mut ds = load_dataset(data, &schema).stage(Stage::Load)?;
    if let Some(label) = year_label {
        ds = ds.with_year_label(label);
    }
    run_year(&ds, previous, cfg)
}
