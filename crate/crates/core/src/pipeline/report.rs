//! Year-over-year comparison and CSV report files.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{YearState, SCORE_MAX, SCORE_MIN};
use crate::error::{Error, Result};

/// Report files written for every run, in write order.
pub const REPORT_FILES: [&str; 5] = [
    "scores.csv",
    "ranking.csv",
    "targets.csv",
    "loss_history.csv",
    "comparison.csv",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Same,
}

impl Direction {
    fn from_delta(delta: i64) -> Self {
        match delta.cmp(&0) {
            std::cmp::Ordering::Greater => Direction::Up,
            std::cmp::Ordering::Less => Direction::Down,
            std::cmp::Ordering::Equal => Direction::Same,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Same => "same",
        }
    }
}

/// External ranking (and optionally scores) to compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub entries: Vec<ReferenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReferenceEntry {
    pub entity_id: String,
    pub rank: usize,
    #[serde(default)]
    pub score: Option<f64>,
}

impl Reference {
    /// CSV with header `entity_id,rank[,score]`.
    pub fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for row in rdr.deserialize::<ReferenceEntry>() {
            let entry = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                column: 0,
                message: e.to_string(),
            })?;
            if !seen.insert(entry.entity_id.clone()) {
                return Err(Error::invalid(format!(
                    "reference lists `{}` twice",
                    entry.entity_id
                )));
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(Error::invalid("reference ranking is empty"));
        }
        Ok(Reference { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    fn score_range(&self) -> Option<(f64, f64)> {
        let scores: Option<Vec<f64>> = self.entries.iter().map(|e| e.score).collect();
        let scores = scores?;
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonEntry {
    pub entity_id: String,
    pub previous_rank: usize,
    pub current_rank: usize,
    /// previous − current; positive means the entity moved up.
    pub rank_delta: i64,
    pub direction: Direction,
    pub previous_score: f64,
    pub current_score: f64,
    pub score_delta: f64,
    pub reference_rank: Option<usize>,
    pub rank_distance: Option<usize>,
    pub reference_score: Option<f64>,
    /// Current score mapped affinely from [1, 7] onto the reference score range.
    pub reanchored_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub current_year: String,
    pub previous_year: String,
    /// Ordered by current rank.
    pub entries: Vec<ComparisonEntry>,
    pub average_score_change: f64,
    pub mean_abs_rank_distance: Option<f64>,
    pub mean_abs_score_difference: Option<f64>,
}

/// Rank and score changes from `previous` to `current`, optionally against a reference.
///
/// Entities excluded in either state are left out, and ranks are renumbered over the
/// rest. Reference distances use current ranks renumbered over the reference entities.
pub fn compare(
    current: &YearState,
    previous: &YearState,
    reference: Option<&Reference>,
) -> Result<ComparisonReport> {
    let now: HashSet<&str> = current.entity_ids.iter().map(String::as_str).collect();
    let before: HashSet<&str> = previous.entity_ids.iter().map(String::as_str).collect();
    if now != before {
        let mut diff: Vec<&str> = now.symmetric_difference(&before).copied().collect();
        diff.sort_unstable();
        return Err(Error::invalid(format!(
            "entity sets differ between states: {}",
            diff.join(", ")
        )));
    }
    let excluded: HashSet<&str> = current
        .config
        .exclude
        .iter()
        .chain(&previous.config.exclude)
        .map(String::as_str)
        .collect();
    let reported = |s: &YearState| -> HashMap<String, usize> {
        let mut order: Vec<usize> = (0..s.entity_ids.len())
            .filter(|&i| !excluded.contains(s.entity_ids[i].as_str()))
            .collect();
        order.sort_by_key(|&i| s.ranks[i]);
        order
            .into_iter()
            .enumerate()
            .map(|(pos, i)| (s.entity_ids[i].clone(), pos + 1))
            .collect()
    };
    let cur_rank = reported(current);
    let prev_rank = reported(previous);

    let mut entries: Vec<ComparisonEntry> = cur_rank
        .iter()
        .map(|(id, &cr)| {
            let ci = current.index_of(id).unwrap();
            let pi = previous.index_of(id).unwrap();
            let pr = prev_rank[id];
            let delta = pr as i64 - cr as i64;
            ComparisonEntry {
                entity_id: id.clone(),
                previous_rank: pr,
                current_rank: cr,
                rank_delta: delta,
                direction: Direction::from_delta(delta),
                previous_score: previous.scores_scaled[pi],
                current_score: current.scores_scaled[ci],
                score_delta: current.scores_scaled[ci] - previous.scores_scaled[pi],
                reference_rank: None,
                rank_distance: None,
                reference_score: None,
                reanchored_score: None,
            }
        })
        .collect();
    entries.sort_by_key(|e| e.current_rank);
    if entries.is_empty() {
        return Err(Error::invalid("every entity is excluded"));
    }
    let average_score_change =
        entries.iter().map(|e| e.score_delta).sum::<f64>() / entries.len() as f64;

    let mut mean_abs_rank_distance = None;
    let mut mean_abs_score_difference = None;
    if let Some(reference) = reference {
        let by_id: HashMap<&str, &ReferenceEntry> =
            reference.entries.iter().map(|e| (e.entity_id.as_str(), e)).collect();
        if let Some(missing) = reference
            .entries
            .iter()
            .find(|e| !cur_rank.contains_key(&e.entity_id))
        {
            return Err(Error::invalid(format!(
                "reference entity `{}` is not a reported entity of the current state",
                missing.entity_id
            )));
        }
        // entries are in current-rank order, so position among reference members is the sub-rank
        let mut sub_rank = 0usize;
        let mut distance_sum = 0usize;
        for e in entries.iter_mut() {
            if let Some(r) = by_id.get(e.entity_id.as_str()) {
                sub_rank += 1;
                let dist = sub_rank.abs_diff(r.rank);
                e.reference_rank = Some(r.rank);
                e.rank_distance = Some(dist);
                e.reference_score = r.score;
                distance_sum += dist;
            }
        }
        mean_abs_rank_distance = Some(distance_sum as f64 / reference.entries.len() as f64);

        if let Some((lo, hi)) = reference.score_range() {
            let mut diff_sum = 0.0;
            for e in entries.iter_mut().filter(|e| e.reference_rank.is_some()) {
                let s = lo + (hi - lo) * (e.current_score - SCORE_MIN) / (SCORE_MAX - SCORE_MIN);
                e.reanchored_score = Some(s);
                diff_sum += (s - e.reference_score.unwrap()).abs();
            }
            mean_abs_score_difference = Some(diff_sum / reference.entries.len() as f64);
        }
    }

    Ok(ComparisonReport {
        current_year: current.year_label.clone(),
        previous_year: previous.year_label.clone(),
        entries,
        average_score_change,
        mean_abs_rank_distance,
        mean_abs_score_difference,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(&row).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const COMPARISON_HEADER: [&str; 13] = [
    "entity_id",
    "previous_rank",
    "current_rank",
    "rank_delta",
    "direction",
    "previous_score",
    "current_score",
    "score_delta",
    "score_delta_display",
    "reference_rank",
    "rank_distance",
    "reference_score",
    "reanchored_score",
];

fn write_comparison(path: &Path, report: Option<&ComparisonReport>) -> Result<()> {
    let rows = report
        .map(|r| {
            r.entries
                .iter()
                .map(|e| {
                    vec![
                        e.entity_id.clone(),
                        e.previous_rank.to_string(),
                        e.current_rank.to_string(),
                        e.rank_delta.to_string(),
                        e.direction.as_str().to_owned(),
                        e.previous_score.to_string(),
                        e.current_score.to_string(),
                        e.score_delta.to_string(),
                        format!("{:.2}", e.score_delta),
                        opt(e.reference_rank),
                        opt(e.rank_distance),
                        opt(e.reference_score),
                        opt(e.reanchored_score),
                    ]
                })
                .collect()
        })
        .unwrap_or_default();
    write_csv(path, &COMPARISON_HEADER, rows)
}

fn write_comparison_summary(path: &Path, report: &ComparisonReport) -> Result<()> {
    write_csv(
        path,
        &["metric", "value"],
        vec![
            vec!["current_year".into(), report.current_year.clone()],
            vec!["previous_year".into(), report.previous_year.clone()],
            vec!["entities".into(), report.entries.len().to_string()],
            vec!["average_score_change".into(), report.average_score_change.to_string()],
            vec!["mean_abs_rank_distance".into(), opt(report.mean_abs_rank_distance)],
            vec!["mean_abs_score_difference".into(), opt(report.mean_abs_score_difference)],
        ],
    )
}

/// Writes `comparison.csv` and `comparison_summary.csv` into `out_dir`.
pub fn write_comparison_files(out_dir: impl AsRef<Path>, report: &ComparisonReport) -> Result<()> {
    let dir = out_dir.as_ref();
    write_comparison(&dir.join("comparison.csv"), Some(report))?;
    write_comparison_summary(&dir.join("comparison_summary.csv"), report)
}

/// Writes the five report CSVs and `state.json`, plus `comparison_summary.csv`
/// when a report is given. Returns the written paths.
pub fn emit_reports(
    state: &YearState,
    report: Option<&ComparisonReport>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cs = &state.cluster_state;
    let reported = state.reported_ranks();
    let path = |name: &str| dir.join(name);
    let mut written = Vec::new();

    let scores = (0..state.entity_ids.len())
        .map(|i| {
            vec![
                state.entity_ids[i].clone(),
                cs.labels[i].to_string(),
                cs.entity_cluster_rank(i).to_string(),
                cs.within_cluster_rank[i].to_string(),
                cs.entity_projection[i].to_string(),
                state.scores_raw[i].to_string(),
                state.scores_scaled[i].to_string(),
                format!("{:.2}", state.scores_scaled[i]),
                state.ranks[i].to_string(),
                opt(reported[i]),
            ]
        })
        .collect();
    let p = path(REPORT_FILES[0]);
    write_csv(
        &p,
        &[
            "entity_id",
            "cluster",
            "cluster_rank",
            "within_cluster_rank",
            "projection",
            "raw_score",
            "scaled_score",
            "scaled_score_display",
            "rank",
            "reported_rank",
        ],
        scores,
    )?;
    written.push(p);

    let mut order: Vec<usize> = (0..state.entity_ids.len()).collect();
    order.sort_by_key(|&i| state.ranks[i]);
    let ranking = order
        .into_iter()
        .map(|i| {
            vec![
                state.ranks[i].to_string(),
                opt(reported[i]),
                state.entity_ids[i].clone(),
                state.scores_scaled[i].to_string(),
                format!("{:.2}", state.scores_scaled[i]),
                state.is_excluded(&state.entity_ids[i]).to_string(),
            ]
        })
        .collect();
    let p = path(REPORT_FILES[1]);
    write_csv(
        &p,
        &["rank", "reported_rank", "entity_id", "scaled_score", "scaled_score_display", "excluded"],
        ranking,
    )?;
    written.push(p);

    let p = path(REPORT_FILES[2]);
    state.targets.write_csv(&p)?;
    written.push(p);

    let p = path(REPORT_FILES[3]);
    let losses = state
        .loss_history
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), l.to_string()])
        .collect();
    write_csv(&p, &["epoch", "mean_pair_loss"], losses)?;
    written.push(p);

    let p = path(REPORT_FILES[4]);
    write_comparison(&p, report)?;
    written.push(p);

    if let Some(r) = report {
        let p = path("comparison_summary.csv");
        write_comparison_summary(&p, r)?;
        written.push(p);
    }

    let p = path("state.json");
    state.save(&p)?;
    written.push(p);
    Ok(written)
}
