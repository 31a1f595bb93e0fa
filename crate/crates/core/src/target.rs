//! Pairwise target probabilities derived from cluster structure.
//!
//! `t[i][j]` is the target probability that entity `i` outranks entity `j`.
//! Every admissible value is a multiple of 0.05 and is stored through [`Level`],
//! so complementary entries come out as exact decimal pairs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relarm::ClusterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// First-year rules: cluster order plus within-cluster rank gaps.
    Static,
    /// Later-year rules that also account for movement between clusters.
    Dynamic,
}

impl TargetMode {
    /// Admissible off-diagonal values, in twentieths.
    fn allowed(self) -> &'static [u8] {
        match self {
            TargetMode::Static => &[0, 7, 8, 9, 11, 12, 13, 20],
            TargetMode::Dynamic => &[0, 7, 8, 9, 10, 11, 12, 13, 20],
        }
    }

    pub fn allowed_values(self) -> Vec<f64> {
        self.allowed().iter().map(|&k| Level(k).value()).collect()
    }
}

/// A target probability expressed in twentieths (0.05 steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Level(u8);

impl Level {
    const ZERO: Level = Level(0);
    const ONE: Level = Level(20);
    const HALF: Level = Level(10);
    const P35: Level = Level(7);
    const P65: Level = Level(13);

    fn value(self) -> f64 {
        f64::from(self.0) / 20.0
    }

    fn complement(self) -> Level {
        Level(20 - self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMatrix {
    pub entity_ids: Vec<String>,
    pub mode: TargetMode,
    pub t: Vec<Vec<f64>>,
}

impl TargetMatrix {
    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.t[i][j]
    }

    fn from_upper(entity_ids: Vec<String>, mode: TargetMode, mut rule: impl FnMut(usize, usize) -> Level) -> Self {
        let m = entity_ids.len();
        let mut t = vec![vec![0.5; m]; m];
        for i in 0..m {
            for j in (i + 1)..m {
                let l = rule(i, j);
                t[i][j] = l.value();
                t[j][i] = l.complement().value();
            }
        }
        TargetMatrix { entity_ids, mode, t }
    }

    /// Renders the matrix as CSV: `entity_id,<ids...>` then one row per entity.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("entity_id");
        for id in &self.entity_ids {
            out.push(',');
            out.push_str(&csv_field(id));
        }
        out.push('\n');
        for (id, row) in self.entity_ids.iter().zip(&self.t) {
            out.push_str(&csv_field(id));
            for &x in row {
                out.push(',');
                out.push_str(&render_value(x));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(reader: impl Read, mode: TargetMode) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Parse {
            line: 1,
            column: 0,
            message: e.to_string(),
        })?;
        let entity_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let m = entity_ids.len();
        let mut t = Vec::with_capacity(m);
        for (r, row) in rdr.records().enumerate() {
            let line = r as u64 + 2;
            let row = row.map_err(|e| Error::Parse {
                line,
                column: 0,
                message: e.to_string(),
            })?;
            if row.len() != m + 1 {
                return Err(Error::Parse {
                    line,
                    column: row.len().min(m + 1) + 1,
                    message: format!("row has {} columns, expected {}", row.len(), m + 1),
                });
            }
            if r >= m || row[0] != entity_ids[r] {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("row id `{}` does not match header order", &row[0]),
                });
            }
            let vals = row
                .iter()
                .skip(1)
                .enumerate()
                .map(|(c, cell)| {
                    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        column: c + 2,
                        message: format!("`{cell}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            t.push(vals);
        }
        if t.len() != m {
            return Err(Error::Parse {
                line: t.len() as u64 + 2,
                column: 1,
                message: format!("matrix has {} rows, header lists {m} entities", t.len()),
            });
        }
        Ok(TargetMatrix { entity_ids, mode, t })
    }

    pub fn load_csv(path: impl AsRef<Path>, mode: TargetMode) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, mode)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Two decimals for multiples of 0.05, shortest round-trip form otherwise.
fn render_value(x: f64) -> String {
    let k = (x * 20.0).round();
    if (0.0..=20.0).contains(&k) && Level(k as u8).value() == x {
        format!("{x:.2}")
    } else {
        format!("{x}")
    }
}

/// Within-cluster value for entity `i` against `j` from the rank gap r_j − r_i.
fn rank_gap_level(gap: i64) -> Level {
    match gap {
        g if g >= 3 => Level(13),
        2 => Level(12),
        1 => Level(11),
        -1 => Level(9),
        -2 => Level(8),
        _ => Level(7),
    }
}

fn static_level(cs: &ClusterState, i: usize, j: usize) -> Level {
    let (ci, cj) = (cs.entity_cluster_rank(i), cs.entity_cluster_rank(j));
    if ci != cj {
        return if ci < cj { Level::ONE } else { Level::ZERO };
    }
    let gap = cs.within_cluster_rank[j] as i64 - cs.within_cluster_rank[i] as i64;
    rank_gap_level(gap)
}

/// First-year target matrix.
pub fn build_static(cs: &ClusterState) -> Result<TargetMatrix> {
    cs.check_complete()?;
    Ok(TargetMatrix::from_upper(cs.entity_ids.clone(), TargetMode::Static, |i, j| {
        static_level(cs, i, j)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    /// Moved into a higher-ranked cluster.
    Upgraded,
    Stayed,
    /// Moved into a lower-ranked cluster.
    Downgraded,
}

/// Rule for `i` against `j` when both sit in the same current cluster; `i_higher`
/// means `i` has the larger projection. Patterns without a direct rule are the
/// mirror image of one that has, taken through complementarity.
fn same_cluster_level(mi: Movement, mj: Movement, i_higher: bool, static_value: Level) -> Level {
    use Movement::*;
    match (mi, mj) {
        (Stayed, Stayed) => static_value,
        (Stayed, Downgraded) => {
            if i_higher {
                Level::P65
            } else {
                Level::HALF
            }
        }
        (Stayed, Upgraded) => {
            if i_higher {
                Level::HALF
            } else {
                Level::P35
            }
        }
        (Downgraded, Downgraded) | (Upgraded, Upgraded) => Level::HALF,
        // as printed: the downgraded entity wins when it has the lower projection
        (Downgraded, Upgraded) => {
            if i_higher {
                Level::HALF
            } else {
                Level::P65
            }
        }
        (Downgraded, Stayed) | (Upgraded, Stayed) | (Upgraded, Downgraded) => {
            same_cluster_level(mj, mi, !i_higher, static_value.complement()).complement()
        }
    }
}

/// Cluster movement per entity of `current`, aligned with `previous` by entity id.
pub fn movements(current: &ClusterState, previous: &ClusterState) -> Result<Vec<Movement>> {
    let now: BTreeSet<&str> = current.entity_ids.iter().map(String::as_str).collect();
    let before: BTreeSet<&str> = previous.entity_ids.iter().map(String::as_str).collect();
    if now != before || now.len() != current.entity_ids.len() {
        let diff: Vec<&str> = now.symmetric_difference(&before).copied().collect();
        return Err(Error::invalid(format!(
            "entity sets differ between years: {}",
            diff.join(", ")
        )));
    }
    let prev_index: std::collections::HashMap<&str, usize> = previous
        .entity_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    Ok(current
        .entity_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let before = previous.entity_cluster_rank(prev_index[id.as_str()]);
            let now = current.entity_cluster_rank(i);
            match before.cmp(&now) {
                std::cmp::Ordering::Greater => Movement::Upgraded,
                std::cmp::Ordering::Equal => Movement::Stayed,
                std::cmp::Ordering::Less => Movement::Downgraded,
            }
        })
        .collect())
}

/// Later-year target matrix.
pub fn build_dynamic(current: &ClusterState, previous: &ClusterState) -> Result<TargetMatrix> {
    current.check_complete()?;
    previous.check_complete()?;
    let moves = movements(current, previous)?;
    Ok(TargetMatrix::from_upper(current.entity_ids.clone(), TargetMode::Dynamic, |i, j| {
        let base = static_level(current, i, j);
        if current.entity_cluster_rank(i) != current.entity_cluster_rank(j) {
            return base;
        }
        let i_higher = current.within_cluster_rank[i] < current.within_cluster_rank[j];
        same_cluster_level(moves[i], moves[j], i_higher, base)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    /// Off-diagonal value outside the admissible set for the mode.
    Value { i: usize, j: usize, value: f64 },
    Complement { i: usize, j: usize, sum: f64 },
    Diagonal { i: usize, value: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::Value { i, j, value } => write!(f, "t[{i}][{j}] = {value} is not admissible"),
            Violation::Complement { i, j, sum } => write!(f, "t[{i}][{j}] + t[{j}][{i}] = {sum} != 1"),
            Violation::Diagonal { i, value } => write!(f, "t[{i}][{i}] = {value} != 0.5"),
        }
    }
}

/// Lists every violation of the admissible-value, complementarity and diagonal rules.
pub fn validate(tm: &TargetMatrix) -> Vec<Violation> {
    let m = tm.entity_ids.len();
    if tm.t.len() != m || tm.t.iter().any(|r| r.len() != m) {
        return vec![Violation::Shape(format!("matrix is not {m}x{m}"))];
    }
    let allowed = tm.mode.allowed_values();
    let mut out = Vec::new();
    for i in 0..m {
        if tm.t[i][i] != 0.5 {
            out.push(Violation::Diagonal { i, value: tm.t[i][i] });
        }
        for j in 0..m {
            if i == j {
                continue;
            }
            let v = tm.t[i][j];
            if !allowed.contains(&v) {
                out.push(Violation::Value { i, j, value: v });
            }
            if i < j {
                let sum = v + tm.t[j][i];
                if sum != 1.0 {
                    out.push(Violation::Complement { i, j, sum });
                }
            }
        }
    }
    out
}

pub fn format_violations(v: &[Violation]) -> String {
    let mut s = String::new();
    for x in v {
        let _ = writeln!(s, "{x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relarm::FeatureSet;

    /// Cluster state with explicit per-entity cluster ranks and within-cluster ranks.
    /// Cluster index == cluster rank - 1; projections follow the given within ranks.
    fn state(ids: &[&str], cluster_rank: &[usize], within: &[usize]) -> ClusterState {
        let k = *cluster_rank.iter().max().unwrap();
        ClusterState {
            entity_ids: ids.iter().map(|s| s.to_string()).collect(),
            labels: cluster_rank.iter().map(|r| r - 1).collect(),
            centers: vec![vec![0.0]; k],
            projections: (0..k).map(|q| (k - q) as f64).collect(),
            cluster_order: (0..k).collect(),
            cluster_rank: (1..=k).collect(),
            entity_projection: cluster_rank
                .iter()
                .zip(within)
                .map(|(&c, &w)| 100.0 * (k + 1 - c) as f64 - w as f64)
                .collect(),
            within_cluster_rank: within.to_vec(),
        }
    }

    #[test]
    fn cross_cluster_is_zero_or_one() {
        let cs = state(&["a", "b"], &[1, 2], &[1, 1]);
        let t = build_static(&cs).unwrap();
        assert_eq!(t.get(0, 1), 1.0);
        assert_eq!(t.get(1, 0), 0.0);
        assert_eq!(t.get(0, 0), 0.5);
    }

    #[test]
    fn within_cluster_gap_ladder() {
        let cs = state(&["a", "b", "c", "d", "e"], &[1; 5], &[1, 2, 3, 4, 5]);
        let t = build_static(&cs).unwrap();
        assert_eq!(t.get(0, 1), 0.55);
        assert_eq!(t.get(1, 0), 0.45);
        assert_eq!(t.get(0, 2), 0.6);
        assert_eq!(t.get(2, 0), 0.4);
        assert_eq!(t.get(0, 3), 0.65);
        assert_eq!(t.get(0, 4), 0.65);
        assert_eq!(t.get(4, 0), 0.35);
        assert!(validate(&t).is_empty());
    }

    #[test]
    fn b1_downgraded_into_cluster() {
        // j (index 1) was in cluster rank 1, now in rank 2 below i (index 0).
        let prev = state(&["i", "j", "k"], &[2, 1, 2], &[1, 1, 2]);
        let cur = state(&["i", "j", "k"], &[2, 2, 2], &[1, 2, 3]);
        let t = build_dynamic(&cur, &prev).unwrap();
        assert_eq!(t.get(0, 1), 0.65);
        // k stayed and sits below j
        assert_eq!(t.get(2, 1), 0.5);
        // i and k both stayed: static rule
        assert_eq!(t.get(0, 2), 0.6);
        assert!(validate(&t).is_empty());
    }

    #[test]
    fn b1_mirror_for_upgrade() {
        // j upgraded from rank 3 into rank 2
        let prev = state(&["i", "j", "k"], &[2, 3, 2], &[1, 1, 2]);
        let cur = state(&["i", "j", "k"], &[2, 2, 2], &[1, 2, 3]);
        let t = build_dynamic(&cur, &prev).unwrap();
        assert_eq!(t.get(0, 1), 0.5);
        assert_eq!(t.get(2, 1), 0.35);
        assert_eq!(t.get(1, 2), 0.65);
    }

    #[test]
    fn b2_same_direction() {
        let prev = state(&["i", "j", "x"], &[1, 1, 2], &[1, 2, 1]);
        let cur = state(&["i", "j", "x"], &[2, 2, 1], &[1, 2, 1]);
        let t = build_dynamic(&cur, &prev).unwrap();
        assert_eq!(t.get(0, 1), 0.5);
        assert_eq!(t.get(1, 0), 0.5);
    }

    #[test]
    fn b3_opposite_moves() {
        // i downgraded from 1 to 2, j upgraded from 3 to 2
        let prev = state(&["i", "j"], &[1, 3], &[1, 1]);
        let cur_i_higher = state(&["i", "j"], &[2, 2], &[1, 2]);
        let t = build_dynamic(&cur_i_higher, &prev).unwrap();
        assert_eq!(t.get(0, 1), 0.5);
        let cur_i_lower = state(&["i", "j"], &[2, 2], &[2, 1]);
        let t = build_dynamic(&cur_i_lower, &prev).unwrap();
        assert_eq!(t.get(0, 1), 0.65);
        assert_eq!(t.get(1, 0), 0.35);
    }

    #[test]
    fn no_movement_matches_static() {
        let cs = state(&["a", "b", "c", "d"], &[1, 1, 2, 2], &[1, 2, 1, 2]);
        let dynamic = build_dynamic(&cs, &cs).unwrap();
        assert_eq!(dynamic.t, build_static(&cs).unwrap().t);
        assert_eq!(dynamic.mode, TargetMode::Dynamic);
    }

    #[test]
    fn entity_mismatch_lists_difference() {
        let a = state(&["a", "b"], &[1, 2], &[1, 1]);
        let b = state(&["a", "c"], &[1, 2], &[1, 1]);
        match build_dynamic(&a, &b).unwrap_err() {
            Error::InvalidInput(msg) => assert!(msg.contains("b, c"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn movement_is_matched_by_id_not_position() {
        let prev = state(&["b", "a"], &[2, 1], &[1, 1]);
        let cur = state(&["a", "b"], &[1, 2], &[1, 1]);
        assert_eq!(movements(&cur, &prev).unwrap(), vec![Movement::Stayed, Movement::Stayed]);
    }

    #[test]
    fn validate_reports_bad_value_and_complement() {
        let cs = state(&["a", "b"], &[1, 1], &[1, 2]);
        let mut t = build_static(&cs).unwrap();
        t.t[0][1] = 0.7;
        t.t[1][0] = 0.3;
        let v = validate(&t);
        assert!(v.contains(&Violation::Value { i: 0, j: 1, value: 0.7 }));
        t.t[0][1] = 0.6;
        t.t[1][0] = 0.6;
        let v = validate(&t);
        assert!(matches!(v.as_slice(), [Violation::Complement { i: 0, j: 1, .. }]), "{v:?}");
        t.t[0][1] = 0.5;
        t.t[1][0] = 0.5;
        assert!(matches!(validate(&t).as_slice(), [Violation::Value { .. }, Violation::Value { .. }]));
        t.mode = TargetMode::Dynamic;
        assert!(validate(&t).is_empty());
    }

    #[test]
    fn csv_round_trip_and_rendering() {
        let cs = state(&["a", "b,c", "d"], &[1, 1, 2], &[1, 2, 1]);
        let t = build_static(&cs).unwrap();
        let text = t.to_csv();
        assert!(text.starts_with("entity_id,a,\"b,c\",d\n"));
        assert!(text.contains("a,0.50,0.55,1.00\n"));
        let back = TargetMatrix::read_csv(text.as_bytes(), TargetMode::Static).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn incomplete_state_rejected() {
        let mut cs = state(&["a", "b"], &[1, 1], &[1, 2]);
        cs.within_cluster_rank.pop();
        assert!(matches!(build_static(&cs), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn built_from_real_clustering() {
        let f = FeatureSet::new(
            (0..6).map(|i| format!("e{i}")).collect(),
            (0..6).map(|i| vec![i as f64 / 5.0]).collect(),
        )
        .unwrap();
        let cs = ClusterState::build(&f, vec![0, 0, 0, 1, 1, 1], vec![vec![0.2], vec![0.8]], &[1.0]).unwrap();
        let t = build_static(&cs).unwrap();
        assert_eq!(t.get(5, 0), 1.0);
        assert_eq!(t.get(5, 4), 0.55);
        assert!(validate(&t).is_empty());
    }
}
