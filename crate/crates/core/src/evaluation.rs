//! Leave-one-out evaluation of experience selection.
//!
//! Each experience of a group plays the live query once while the others
//! form the map. Ground truth is the Recall@1 obtained by localising the
//! whole query against each single experience; predictions come from
//! comparing the query's warmup prefix with every map experience.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::random_expected_error;
use crate::error::{Error, Result};
use crate::feature_store::{select_warmup, FeatureSet, WarmupPolicy};
use crate::localisation::{localise, GroundTruthMatcher};
use crate::map_store::{build_map, scores_by_id, select_experience, Method};
use crate::ranking::{
    aggregate_errors, gt_ranking, mean, predicted_ranking, ranking_error, EvaluationCell,
    MethodAverage,
};
use crate::vdna::HistogramConfig;

pub const RANDOM_METHOD: &str = "random";

pub const CSV_HEADER: [&str; 10] = [
    "backbone",
    "split",
    "query",
    "method",
    "position",
    "gt_experience",
    "pred_experience",
    "gt_recall",
    "pred_score",
    "penalty",
];

/// Ground-truth tolerance, resolved per query (the metric origin is the
/// query's first frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherSpec {
    Frames(u64),
    Metres(f64),
}

impl MatcherSpec {
    pub fn for_query(&self, query: &FeatureSet) -> Result<GroundTruthMatcher> {
        let m = match *self {
            MatcherSpec::Frames(max_frames) => GroundTruthMatcher::FrameTolerance { max_frames },
            MatcherSpec::Metres(max_metres) => {
                let origin = query.frames()[0]
                    .pose
                    .gps()
                    .ok_or(Error::PoseVariantMismatch)?;
                GroundTruthMatcher::MetricTolerance { max_metres, origin }
            }
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub warmup: WarmupPolicy,
    pub matcher: MatcherSpec,
    pub histogram: HistogramConfig,
    pub methods: Vec<Method>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            warmup: WarmupPolicy::FirstKFrames(100),
            matcher: MatcherSpec::Frames(5),
            histogram: HistogramConfig::default(),
            methods: Method::ALL.to_vec(),
        }
    }
}

/// Experiences recorded over one spatial split with one backbone.
#[derive(Debug, Clone)]
pub struct ExperimentGroup {
    pub split: String,
    pub experiences: Vec<FeatureSet>,
}

impl ExperimentGroup {
    pub fn backbone(&self) -> &str {
        self.experiences
            .first()
            .map(|e| e.backbone_id())
            .unwrap_or_default()
    }

    fn validate(&self) -> Result<()> {
        if self.experiences.len() < 3 {
            return Err(Error::TooFewExperiences {
                needed: 3,
                found: self.experiences.len(),
            });
        }
        let mut ids = BTreeSet::new();
        let first = &self.experiences[0];
        for e in &self.experiences {
            if !ids.insert(e.experience_id()) {
                return Err(Error::InvalidInput(format!(
                    "experience {} appears twice in split {}",
                    e.experience_id(),
                    self.split
                )));
            }
            if e.backbone_id() != first.backbone_id()
                || e.neuron_count() != first.neuron_count()
                || e.embedding_dim() != first.embedding_dim()
            {
                return Err(Error::IncompatibleFeatureSet(format!(
                    "{} does not match {} in backbone or dimensions",
                    e.experience_id(),
                    first.experience_id()
                )));
            }
        }
        Ok(())
    }
}

/// Per-query facts that are not tied to a single method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub backbone: String,
    pub split: String,
    pub query: String,
    pub recalls: BTreeMap<String, f64>,
    /// Recall@1 when every candidate is searched at once.
    pub composite_recall: Option<f64>,
    /// Expected mean slot penalty of a random ordering.
    pub random_expected_error: Option<f64>,
    pub warmup_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cells: Vec<EvaluationCell>,
    pub queries: Vec<QueryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub methods: BTreeMap<String, MethodAverage>,
    pub by_backbone: BTreeMap<String, BTreeMap<String, MethodAverage>>,
    pub queries: Vec<QueryOutcome>,
}

impl EvaluationReport {
    /// Per-method mean slot penalty, plus the random baseline weighted by
    /// each query's candidate count.
    pub fn method_averages(&self) -> Result<BTreeMap<String, MethodAverage>> {
        self.averages_where(|_| true)
    }

    fn averages_where(&self, keep: impl Fn(&str) -> bool) -> Result<BTreeMap<String, MethodAverage>> {
        let cells: Vec<EvaluationCell> = self
            .cells
            .iter()
            .filter(|c| keep(&c.backbone))
            .cloned()
            .collect();
        let mut out = if cells.is_empty() {
            BTreeMap::new()
        } else {
            aggregate_errors(&cells)?
        };
        let mut slots = Vec::new();
        let mut n = 0;
        for q in self.queries.iter().filter(|q| keep(&q.backbone)) {
            if let Some(r) = q.random_expected_error {
                slots.extend(std::iter::repeat_n(r, q.recalls.len()));
                n += 1;
            }
        }
        if !slots.is_empty() {
            out.insert(
                RANDOM_METHOD.to_string(),
                MethodAverage {
                    mean_penalty: mean(&slots),
                    slots: slots.len(),
                    cells: n,
                },
            );
        }
        if out.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(out)
    }

    pub fn summary(&self) -> Result<ReportSummary> {
        let backbones: BTreeSet<&str> = self
            .cells
            .iter()
            .map(|c| c.backbone.as_str())
            .chain(self.queries.iter().map(|q| q.backbone.as_str()))
            .collect();
        let mut by_backbone = BTreeMap::new();
        for b in backbones {
            by_backbone.insert(b.to_string(), self.averages_where(|x| x == b)?);
        }
        Ok(ReportSummary {
            methods: self.method_averages()?,
            by_backbone,
            queries: self.queries.clone(),
        })
    }

    /// One row per ranking slot of every cell, in evaluation order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for c in &self.cells {
            for s in &c.error.slots {
                w.write_record([
                    c.backbone.as_str(),
                    c.split.as_str(),
                    c.query.as_str(),
                    c.method.as_str(),
                    &s.position.to_string(),
                    &s.gt_experience,
                    &s.pred_experience,
                    &fmt_num(s.gt_recall),
                    &fmt_num(s.pred_score),
                    &fmt_num(s.penalty),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.summary()?)
            .map_err(|e| Error::InvalidInput(format!("summary serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

/// Runs the full leave-one-out protocol over every group.
pub fn evaluate(groups: &[ExperimentGroup], cfg: &EvaluationConfig) -> Result<EvaluationReport> {
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    cfg.histogram.validate()?;
    for g in groups {
        g.validate()?;
    }
    let mut report = EvaluationReport {
        cells: Vec::new(),
        queries: Vec::new(),
    };
    for g in groups {
        for (qi, query) in g.experiences.iter().enumerate() {
            evaluate_query(g, qi, query, cfg, &mut report)?;
        }
    }
    Ok(report)
}

fn evaluate_query(
    group: &ExperimentGroup,
    qi: usize,
    query: &FeatureSet,
    cfg: &EvaluationConfig,
    report: &mut EvaluationReport,
) -> Result<()> {
    let backbone = group.backbone().to_string();
    let candidates: Vec<&FeatureSet> = group
        .experiences
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != qi)
        .map(|(_, e)| e)
        .collect();
    let matcher = cfg.matcher.for_query(query)?;

    let mut recalls = BTreeMap::new();
    for c in &candidates {
        let r = localise(query, &[*c], &matcher)?;
        recalls.insert(c.experience_id().to_string(), r.recall_at_1);
    }
    let composite = localise(query, &candidates, &matcher)?.recall_at_1;
    let gt = gt_ranking(query.experience_id(), &recalls)?;

    let warmup = select_warmup(query, cfg.warmup)?;
    let map = build_map(&candidates, &cfg.histogram)?;
    for &m in &cfg.methods {
        let scored = select_experience(&warmup.set, &map, m)?;
        let pred = predicted_ranking(query.experience_id(), &scores_by_id(&scored))?;
        let error = ranking_error(&gt, &pred)?;
        report.cells.push(EvaluationCell {
            backbone: backbone.clone(),
            split: group.split.clone(),
            query: query.experience_id().to_string(),
            method: m.name().to_string(),
            gt: gt.clone(),
            pred,
            error,
        });
    }
    let random = random_expected_error(&recalls).ok();
    log::info!(
        "{backbone}/{}/{}: recalls {:?}, composite {composite:.2}",
        group.split,
        query.experience_id(),
        recalls
    );
    report.queries.push(QueryOutcome {
        backbone,
        split: group.split.clone(),
        query: query.experience_id().to_string(),
        recalls,
        composite_recall: Some(composite),
        random_expected_error: random,
        warmup_frames: Some(warmup.set.image_count()),
    });
    Ok(())
}

// ---------------------------------------------------------------------------
// Fixture mode: precomputed tables drive the ranking evaluation directly.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub backbone: String,
    pub split: String,
    pub query: String,
    pub experience: String,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub backbone: String,
    pub split: String,
    pub query: String,
    pub method: String,
    pub experience: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRow {
    pub backbone: String,
    pub split: String,
    pub query: String,
    pub recall: f64,
}

pub fn read_fixture<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}

type QueryKey = (String, String, String);

/// Builds a report from tabulated recalls and per-method distances.
/// Cells follow the first-appearance order of the distance rows.
pub fn evaluate_fixture(
    recalls: &[RecallRow],
    distances: &[DistanceRow],
    composite: &[CompositeRow],
) -> Result<EvaluationReport> {
    if recalls.is_empty() || distances.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut query_order: Vec<QueryKey> = Vec::new();
    let mut recall_tables: HashMap<QueryKey, BTreeMap<String, f64>> = HashMap::new();
    for r in recalls {
        let key = (r.backbone.clone(), r.split.clone(), r.query.clone());
        let table = recall_tables.entry(key.clone()).or_insert_with(|| {
            query_order.push(key);
            BTreeMap::new()
        });
        if table.insert(r.experience.clone(), r.recall).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate recall for {}/{}/{} -> {}",
                r.backbone, r.split, r.query, r.experience
            )));
        }
    }

    let mut cell_order: Vec<(QueryKey, String)> = Vec::new();
    let mut dist_tables: HashMap<(QueryKey, String), BTreeMap<String, f64>> = HashMap::new();
    for d in distances {
        let key = ((d.backbone.clone(), d.split.clone(), d.query.clone()), d.method.clone());
        let table = dist_tables.entry(key.clone()).or_insert_with(|| {
            cell_order.push(key);
            BTreeMap::new()
        });
        if table.insert(d.experience.clone(), d.distance).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate distance for {}/{}/{}/{} -> {}",
                d.backbone, d.split, d.query, d.method, d.experience
            )));
        }
    }

    let mut cells = Vec::with_capacity(cell_order.len());
    for key in &cell_order {
        let (qk, method) = key;
        let rec = recall_tables.get(qk).ok_or_else(|| {
            Error::SetMismatch(format!("no recalls for query {}/{}/{}", qk.0, qk.1, qk.2))
        })?;
        let gt = gt_ranking(&qk.2, rec)?;
        let pred = predicted_ranking(&qk.2, &dist_tables[key])?;
        let error = ranking_error(&gt, &pred)?;
        cells.push(EvaluationCell {
            backbone: qk.0.clone(),
            split: qk.1.clone(),
            query: qk.2.clone(),
            method: method.clone(),
            gt,
            pred,
            error,
        });
    }

    let composite: HashMap<QueryKey, f64> = composite
        .iter()
        .map(|c| ((c.backbone.clone(), c.split.clone(), c.query.clone()), c.recall))
        .collect();
    let queries = query_order
        .into_iter()
        .map(|k| {
            let rec = recall_tables.remove(&k).expect("key from order");
            QueryOutcome {
                backbone: k.0.clone(),
                split: k.1.clone(),
                query: k.2.clone(),
                random_expected_error: random_expected_error(&rec).ok(),
                composite_recall: composite.get(&k).copied(),
                recalls: rec,
                warmup_frames: None,
            }
        })
        .collect();
    Ok(EvaluationReport { cells, queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{ShiftScene, SyntheticConfig};

    fn group(n: usize) -> ExperimentGroup {
        let scene = ShiftScene::new(&SyntheticConfig::small(), 42);
        ExperimentGroup {
            split: "s1".into(),
            experiences: (0..n)
                .map(|i| scene.experience(&format!("e{i}"), i as f64, 1000 + i as u64))
                .collect(),
        }
    }

    fn cfg() -> EvaluationConfig {
        EvaluationConfig {
            warmup: WarmupPolicy::FirstKFrames(10),
            histogram: HistogramConfig { bin_count: 32, margin_fraction: 0.05 },
            ..EvaluationConfig::default()
        }
    }

    #[test]
    fn three_experiences_shape() {
        let rep = evaluate(&[group(3)], &cfg()).unwrap();
        assert_eq!(rep.queries.len(), 3);
        assert_eq!(rep.cells.len(), 3 * 3);
        assert!(rep.cells.iter().all(|c| c.error.slots.len() == 2));
        let csv = rep.csv_string().unwrap();
        // header + 3 queries × 3 methods × 2 slots
        assert_eq!(csv.lines().count(), 1 + 18);
        assert!(csv.starts_with(&CSV_HEADER.join(",")));
    }

    #[test]
    fn query_never_in_its_own_candidates() {
        let rep = evaluate(&[group(4)], &cfg()).unwrap();
        for c in &rep.cells {
            assert!(c.gt.ids().all(|id| id != c.query));
            assert!(c.pred.ids().all(|id| id != c.query));
        }
    }

    #[test]
    fn needs_three_experiences() {
        assert!(matches!(
            evaluate(&[group(2)], &cfg()),
            Err(Error::TooFewExperiences { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn metric_matcher_needs_gps() {
        let c = EvaluationConfig {
            matcher: MatcherSpec::Metres(5.0),
            ..cfg()
        };
        assert!(matches!(evaluate(&[group(3)], &c), Err(Error::PoseVariantMismatch)));
    }

    fn winter_fixture() -> (Vec<RecallRow>, Vec<DistanceRow>) {
        let rec = [("Spring", 61.22), ("Summer", 48.47), ("Fall", 40.31)]
            .iter()
            .map(|(e, r)| RecallRow {
                backbone: "b".into(),
                split: "test:2".into(),
                query: "Winter".into(),
                experience: e.to_string(),
                recall: *r,
            })
            .collect();
        let dist = [("Spring", 0.435), ("Fall", 0.566), ("Summer", 0.568)]
            .iter()
            .map(|(e, d)| DistanceRow {
                backbone: "b".into(),
                split: "test:2".into(),
                query: "Winter".into(),
                method: "fd".into(),
                experience: e.to_string(),
                distance: *d,
            })
            .collect();
        (rec, dist)
    }

    #[test]
    fn fixture_worked_example() {
        let (rec, dist) = winter_fixture();
        let rep = evaluate_fixture(&rec, &dist, &[]).unwrap();
        assert_eq!(rep.cells.len(), 1);
        let p = rep.cells[0].error.penalties();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 8.16).abs() < 0.005 && (p[2] - 8.16).abs() < 0.005);
        let avg = rep.method_averages().unwrap();
        assert!((avg["fd"].mean_penalty - 5.44).abs() < 0.005);
        assert!(avg.contains_key(RANDOM_METHOD));
    }

    #[test]
    fn fixture_missing_recalls() {
        let (rec, mut dist) = winter_fixture();
        for d in &mut dist {
            d.query = "Summer".into();
        }
        assert!(matches!(evaluate_fixture(&rec, &dist, &[]), Err(Error::SetMismatch(_))));
    }

    #[test]
    fn fixture_duplicate_rows() {
        let (mut rec, dist) = winter_fixture();
        rec.push(rec[0].clone());
        assert!(evaluate_fixture(&rec, &dist, &[]).is_err());
    }
}
