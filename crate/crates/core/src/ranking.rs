//! Ground-truth and predicted experience rankings and the recall-weighted
//! positional ranking error.
//!
//! A ranking slot `k` is penalised by the gap between the ground-truth
//! Recall@1 of the experience the oracle puts at `k` and that of the
//! experience the predictor puts at `k`. Swapping two experiences whose
//! recalls differ by `g` therefore costs `g` in each of the two slots.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::binio::compensated_sum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Recall@1 in percent, higher first.
    Recall,
    /// Dissimilarity, lower first.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExperience {
    pub experience_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRanking {
    pub query_id: String,
    pub kind: ScoreKind,
    pub entries: Vec<RankedExperience>,
}

impl ExperienceRanking {
    fn build(query_id: &str, scores: &BTreeMap<String, f64>, kind: ScoreKind) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::TooFewExperiences {
                needed: 2,
                found: scores.len(),
            });
        }
        if let Some((id, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("score {v} for {id}")));
        }
        let mut entries: Vec<RankedExperience> = scores
            .iter()
            .map(|(id, &score)| RankedExperience {
                experience_id: id.clone(),
                score,
            })
            .collect();
        entries.sort_by(|a, b| {
            let by_score = match kind {
                ScoreKind::Recall => b.score.total_cmp(&a.score),
                ScoreKind::Distance => a.score.total_cmp(&b.score),
            };
            by_score.then_with(|| a.experience_id.cmp(&b.experience_id))
        });
        Ok(Self {
            query_id: query_id.to_string(),
            kind,
            entries,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.experience_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Orders experiences by actual Recall@1, best first.
pub fn gt_ranking(query_id: &str, recalls: &BTreeMap<String, f64>) -> Result<ExperienceRanking> {
    ExperienceRanking::build(query_id, recalls, ScoreKind::Recall)
}

/// Orders experiences by a dissimilarity score, most similar first.
pub fn predicted_ranking(
    query_id: &str,
    distances: &BTreeMap<String, f64>,
) -> Result<ExperienceRanking> {
    ExperienceRanking::build(query_id, distances, ScoreKind::Distance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPenalty {
    /// 1-based rank position.
    pub position: usize,
    pub gt_experience: String,
    pub pred_experience: String,
    pub gt_recall: f64,
    pub pred_score: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingError {
    pub slots: Vec<SlotPenalty>,
    pub mean_penalty: f64,
}

impl RankingError {
    pub fn penalties(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.penalty).collect()
    }
}

/// `|recall(gt[k]) − recall(pred[k])|` for every slot `k`, given recalls in
/// ground-truth order and a predicted order expressed as indices into it.
pub(crate) fn slot_penalties(gt_recalls: &[f64], pred_order: &[usize]) -> Vec<f64> {
    gt_recalls
        .iter()
        .zip(pred_order)
        .map(|(g, &p)| (g - gt_recalls[p]).abs())
        .collect()
}

pub(crate) fn mean(vals: &[f64]) -> f64 {
    compensated_sum(vals.iter().copied()) / vals.len() as f64
}

pub fn ranking_error(gt: &ExperienceRanking, pred: &ExperienceRanking) -> Result<RankingError> {
    if gt.kind != ScoreKind::Recall {
        return Err(Error::InvalidInput(
            "ground-truth ranking must be scored by recall".into(),
        ));
    }
    let gt_ids: BTreeSet<&str> = gt.ids().collect();
    let pred_ids: BTreeSet<&str> = pred.ids().collect();
    if gt_ids != pred_ids || gt.len() != pred.len() || gt_ids.len() != gt.len() {
        return Err(Error::SetMismatch(format!(
            "ground truth {:?} vs prediction {:?}",
            gt.ids().collect::<Vec<_>>(),
            pred.ids().collect::<Vec<_>>()
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index: BTreeMap<&str, usize> = gt.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let gt_recalls: Vec<f64> = gt.entries.iter().map(|e| e.score).collect();
    let order: Vec<usize> = pred.ids().map(|id| index[id]).collect();
    let penalties = slot_penalties(&gt_recalls, &order);
    let slots = penalties
        .iter()
        .enumerate()
        .map(|(k, &penalty)| SlotPenalty {
            position: k + 1,
            gt_experience: gt.entries[k].experience_id.clone(),
            pred_experience: pred.entries[k].experience_id.clone(),
            gt_recall: gt.entries[k].score,
            pred_score: pred.entries[k].score,
            penalty,
        })
        .collect();
    Ok(RankingError {
        slots,
        mean_penalty: mean(&penalties),
    })
}

/// One (backbone, split, query, method) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCell {
    pub backbone: String,
    pub split: String,
    pub query: String,
    pub method: String,
    pub gt: ExperienceRanking,
    pub pred: ExperienceRanking,
    pub error: RankingError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAverage {
    pub mean_penalty: f64,
    pub slots: usize,
    pub cells: usize,
}

/// Mean slot penalty per method across all cells. Every slot weighs the
/// same, so a query with more candidates contributes proportionally more.
pub fn aggregate_errors(cells: &[EvaluationCell]) -> Result<BTreeMap<String, MethodAverage>> {
    if cells.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_method: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for c in cells {
        let entry = by_method.entry(c.method.as_str()).or_default();
        entry.0.extend(c.error.slots.iter().map(|s| s.penalty));
        entry.1 += 1;
    }
    Ok(by_method
        .into_iter()
        .map(|(m, (pens, n))| {
            (
                m.to_string(),
                MethodAverage {
                    mean_penalty: if pens.is_empty() { 0.0 } else { mean(&pens) },
                    slots: pens.len(),
                    cells: n,
                },
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn winter_gt() -> ExperienceRanking {
        gt_ranking(
            "Winter",
            &map(&[("Spring", 61.22), ("Summer", 48.47), ("Fall", 40.31)]),
        )
        .unwrap()
    }

    #[test]
    fn gt_order_descending() {
        let ids: Vec<_> = winter_gt().ids().map(String::from).collect();
        assert_eq!(ids, ["Spring", "Summer", "Fall"]);
    }

    #[test]
    fn ties_are_lexicographic() {
        let r = gt_ranking("q", &map(&[("B", 50.0), ("A", 50.0)])).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["A", "B"]);
        let r = predicted_ranking("q", &map(&[("B", 1.0), ("A", 1.0)])).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn predicted_ascending() {
        let vdna = predicted_ranking(
            "Winter",
            &map(&[("Spring", 9.11), ("Summer", 11.22), ("Fall", 11.27)]),
        )
        .unwrap();
        assert_eq!(vdna.ids().collect::<Vec<_>>(), ["Spring", "Summer", "Fall"]);
        let fd = predicted_ranking(
            "Winter",
            &map(&[("Spring", 0.435), ("Fall", 0.566), ("Summer", 0.568)]),
        )
        .unwrap();
        assert_eq!(fd.ids().collect::<Vec<_>>(), ["Spring", "Fall", "Summer"]);
        let two = predicted_ranking("q", &map(&[("x", 2.0), ("y", 1.0)])).unwrap();
        assert_eq!(two.ids().collect::<Vec<_>>(), ["y", "x"]);
    }

    #[test]
    fn too_few_and_non_finite() {
        assert!(matches!(
            gt_ranking("q", &map(&[("a", 1.0)])),
            Err(Error::TooFewExperiences { needed: 2, found: 1 })
        ));
        assert!(predicted_ranking("q", &map(&[("a", f64::NAN), ("b", 1.0)])).is_err());
    }

    #[test]
    fn fd_swap_penalty() {
        let pred = predicted_ranking(
            "Winter",
            &map(&[("Spring", 0.435), ("Fall", 0.566), ("Summer", 0.568)]),
        )
        .unwrap();
        let err = ranking_error(&winter_gt(), &pred).unwrap();
        let p = err.penalties();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 8.16).abs() < 0.005);
        assert!((p[2] - 8.16).abs() < 0.005);
        assert!((err.mean_penalty - 5.44).abs() < 0.005);
    }

    #[test]
    fn spring_pixel_penalties() {
        let gt = gt_ranking(
            "Spring",
            &map(&[("Fall", 85.20), ("Summer", 83.16), ("Winter", 54.08)]),
        )
        .unwrap();
        let pred = predicted_ranking(
            "Spring",
            &map(&[("Winter", 1.15), ("Fall", 26.48), ("Summer", 29.17)]),
        )
        .unwrap();
        let p = ranking_error(&gt, &pred).unwrap().penalties();
        for (got, want) in p.iter().zip([31.12, 2.04, 29.08]) {
            assert!((got - want).abs() < 0.005, "{p:?}");
        }
    }

    #[test]
    fn identical_order_zero() {
        let pred = predicted_ranking(
            "Winter",
            &map(&[("Spring", 1.0), ("Summer", 2.0), ("Fall", 3.0)]),
        )
        .unwrap();
        let err = ranking_error(&winter_gt(), &pred).unwrap();
        assert!(err.penalties().iter().all(|&p| p == 0.0));
        assert_eq!(err.mean_penalty, 0.0);
    }

    #[test]
    fn set_mismatch() {
        let pred = predicted_ranking("Winter", &map(&[("Spring", 1.0), ("Autumn", 2.0), ("Fall", 3.0)])).unwrap();
        assert!(matches!(ranking_error(&winter_gt(), &pred), Err(Error::SetMismatch(_))));
        let short = predicted_ranking("Winter", &map(&[("Spring", 1.0), ("Fall", 3.0)])).unwrap();
        assert!(matches!(ranking_error(&winter_gt(), &short), Err(Error::SetMismatch(_))));
    }

    #[test]
    fn reversal_sum_n3() {
        // recalls 90 > 60 > 10, fully reversed prediction
        let gt = gt_ranking("q", &map(&[("a", 90.0), ("b", 60.0), ("c", 10.0)])).unwrap();
        let pred = predicted_ranking("q", &map(&[("c", 0.0), ("b", 1.0), ("a", 2.0)])).unwrap();
        let p = ranking_error(&gt, &pred).unwrap().penalties();
        assert_eq!(p, vec![80.0, 0.0, 80.0]);
    }

    fn cell(method: &str, pens: &[f64]) -> EvaluationCell {
        let gt = winter_gt();
        EvaluationCell {
            backbone: "b".into(),
            split: "s".into(),
            query: "Winter".into(),
            method: method.into(),
            pred: gt.clone(),
            error: RankingError {
                slots: pens
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| SlotPenalty {
                        position: k + 1,
                        gt_experience: String::new(),
                        pred_experience: String::new(),
                        gt_recall: 0.0,
                        pred_score: 0.0,
                        penalty: p,
                    })
                    .collect(),
                mean_penalty: mean(pens),
            },
            gt,
        }
    }

    #[test]
    fn aggregate_single_cell() {
        let avg = aggregate_errors(&[cell("fd", &[0.0, 8.16, 8.16])]).unwrap();
        assert!((avg["fd"].mean_penalty - 5.44).abs() < 1e-12);
        assert_eq!(avg["fd"].slots, 3);
    }

    #[test]
    fn aggregate_weights_slots() {
        let avg = aggregate_errors(&[
            cell("m", &[0.0, 0.0]),
            cell("m", &[3.0, 3.0, 3.0, 3.0]),
            cell("z", &[0.0, 0.0, 0.0]),
        ])
        .unwrap();
        assert!((avg["m"].mean_penalty - 2.0).abs() < 1e-12);
        assert_eq!(avg["z"].mean_penalty, 0.0);
        assert!(matches!(aggregate_errors(&[]), Err(Error::EmptyInput)));
    }
}
