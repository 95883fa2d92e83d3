//! Pixel-intensity and random-ranking baselines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::ranking::{gt_ranking, mean, slot_penalties};

/// Largest candidate list the random baseline enumerates exhaustively.
pub const MAX_EXACT_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSummary {
    pub mean_intensity: f64,
    pub image_count: usize,
}

pub fn pixel_summary(fs: &FeatureSet) -> Result<PixelSummary> {
    let n = fs.image_count();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let sum: f64 = fs.pixel_means().iter().map(|&v| v as f64).sum();
    Ok(PixelSummary {
        mean_intensity: sum / n as f64,
        image_count: n,
    })
}

pub fn pixel_distance(a: &PixelSummary, b: &PixelSummary) -> f64 {
    (a.mean_intensity - b.mean_intensity).abs()
}

/// Expected mean slot penalty of a uniformly random ordering of the
/// candidates, by exhaustive enumeration of all `n!` orderings.
pub fn random_expected_error(recalls: &BTreeMap<String, f64>) -> Result<f64> {
    let n = recalls.len();
    if n > MAX_EXACT_CANDIDATES {
        return Err(Error::TooManyCandidates(n));
    }
    let gt = gt_ranking("", recalls)?;
    let gt_recalls: Vec<f64> = gt.entries.iter().map(|e| e.score).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut per_perm = Vec::new();
    for_each_permutation(&mut order, &mut |perm| {
        per_perm.push(mean(&slot_penalties(&gt_recalls, perm)));
    });
    Ok(mean(&per_perm))
}

/// Heap's algorithm, iterative form.
fn for_each_permutation(items: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
