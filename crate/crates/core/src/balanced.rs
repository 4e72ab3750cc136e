//! Foreground-balanced sampling of labeled RoIs and hard-positive selection
//! by score-ordered non-maximum suppression.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::BoxGenerator;
use crate::geometry::{iou, BBox};
use crate::proi::{generate_proi, GeneratedRoI, GroundTruthSet, IoUDistributionSpec};
use crate::rng::SeededRng;

/// Default box-box IoU at which NMS suppresses a lower-scored candidate.
pub const DEFAULT_NMS_IOU: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRoI {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category_id: u32,
    /// Hardness; larger is harder.
    pub score: f64,
}

impl From<&GeneratedRoI> for LabeledRoI {
    fn from(r: &GeneratedRoI) -> Self {
        Self {
            bbox: r.bbox,
            category_id: r.category_id,
            score: iou_hardness(r),
        }
    }
}

/// Default hardness score: low overlap counts as hard.
pub fn iou_hardness(r: &GeneratedRoI) -> f64 {
    1.0 - r.achieved_iou
}

/// Per-RoI probability `1 / (C * k_c)` where `C` is the number of categories
/// present and `k_c` the number of RoIs sharing this RoI's category.
pub fn ofb_weights(rois: &[LabeledRoI]) -> Result<Vec<f64>> {
    if rois.is_empty() {
        return Err(Error::param("foreground-balanced weights need at least one RoI"));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in rois {
        *counts.entry(r.category_id).or_insert(0) += 1;
    }
    let c = counts.len() as f64;
    Ok(rois
        .iter()
        .map(|r| 1.0 / (c * counts[&r.category_id] as f64))
        .collect())
}

/// Indices of `n` RoIs drawn under [`ofb_weights`]. Without replacement,
/// each draw renormalizes over the RoIs not yet taken.
pub fn ofb_sample_indices(
    rois: &[LabeledRoI],
    n: usize,
    rng: &mut SeededRng,
    with_replacement: bool,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    if !with_replacement && n > rois.len() {
        return Err(Error::param(format!(
            "cannot draw {n} RoIs without replacement from {}",
            rois.len()
        )));
    }
    let weights = ofb_weights(rois)?;
    let mut dist = WeightedIndex::new(&weights).expect("weights are positive");
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let i = dist.sample(rng);
        out.push(i);
        if !with_replacement && k + 1 < n {
            dist.update_weights(&[(i, &0.0)]).expect("untaken RoIs keep positive weight");
        }
    }
    Ok(out)
}

pub fn ofb_sample(
    rois: &[LabeledRoI],
    n: usize,
    rng: &mut SeededRng,
    with_replacement: bool,
) -> Result<Vec<LabeledRoI>> {
    Ok(ofb_sample_indices(rois, n, rng, with_replacement)?
        .into_iter()
        .map(|i| rois[i])
        .collect())
}

/// Greedy NMS. Returns kept indices by descending score; equal scores keep
/// input order. A candidate is dropped when its IoU with any kept box is at
/// least `iou_threshold`.
pub fn nms_indices(candidates: &[LabeledRoI], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &candidates[i].bbox;
        if kept.iter().all(|&k| iou(&candidates[k].bbox, b) < iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(candidates: &[LabeledRoI], iou_threshold: f64) -> Vec<LabeledRoI> {
    nms_indices(candidates, iou_threshold)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

fn check_nms_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::param(format!("NMS IoU threshold must lie in (0, 1], got {t}")));
    }
    Ok(())
}

/// Hard-positive selection over an already generated and scored pool: NMS
/// by score, then the `keep` highest-scoring survivors.
pub fn ohpm_select_scored(
    pool: &[GeneratedRoI],
    scores: &[f64],
    keep: usize,
    nms_iou: f64,
) -> Result<Vec<GeneratedRoI>> {
    check_nms_threshold(nms_iou)?;
    if scores.len() != pool.len() {
        return Err(Error::param(format!(
            "{} scores given for a pool of {} RoIs",
            scores.len(),
            pool.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::param(format!("scores must be finite, got {s}")));
    }
    let labeled: Vec<LabeledRoI> = pool
        .iter()
        .zip(scores)
        .map(|(r, &score)| LabeledRoI {
            bbox: r.bbox,
            category_id: r.category_id,
            score,
        })
        .collect();
    Ok(nms_indices(&labeled, nms_iou)
        .into_iter()
        .take(keep)
        .map(|i| pool[i])
        .collect())
}

/// Generate `pool_size` RoIs, score them with `scorer`, and keep at most
/// `keep` after NMS.
#[allow(clippy::too_many_arguments)]
pub fn ohpm_select(
    gts: &GroundTruthSet,
    spec: &IoUDistributionSpec,
    pool_size: usize,
    keep: usize,
    nms_iou: f64,
    scorer: &dyn Fn(&GeneratedRoI) -> f64,
    rng: &SeededRng,
    generator: &mut BoxGenerator<'_>,
) -> Result<Vec<GeneratedRoI>> {
    if keep == 0 || pool_size < keep {
        return Err(Error::param(format!(
            "need pool_size >= keep >= 1, got pool_size={pool_size}, keep={keep}"
        )));
    }
    check_nms_threshold(nms_iou)?;
    let pool = generate_proi(gts, spec, pool_size, rng, generator)?;
    let scores: Vec<f64> = pool.iter().map(scorer).collect();
    ohpm_select_scored(&pool, &scores, keep, nms_iou)
}
