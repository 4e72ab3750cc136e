//! Positive RoI sets: class-balanced allocation of an RoI budget over ground
//! truths, target IoUs drawn from a binned multinomial, and one generated box
//! per (ground truth, target) slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::BoxGenerator;
use crate::geometry::BBox;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category_id: u32,
    pub instance_id: u64,
}

/// Labeled reference boxes of one image or batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GroundTruth>", into = "Vec<GroundTruth>")]
pub struct GroundTruthSet {
    items: Vec<GroundTruth>,
}

impl GroundTruthSet {
    pub fn new(items: Vec<GroundTruth>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for gt in &items {
            if gt.category_id == 0 {
                return Err(Error::InvalidAnnotation {
                    id: gt.instance_id.to_string(),
                    reason: "category ids start at 1".into(),
                });
            }
            if !seen.insert(gt.instance_id) {
                return Err(Error::InvalidAnnotation {
                    id: gt.instance_id.to_string(),
                    reason: "duplicate instance id".into(),
                });
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[GroundTruth] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct foreground categories, ascending.
    pub fn categories(&self) -> BTreeSet<u32> {
        self.items.iter().map(|g| g.category_id).collect()
    }
}

impl TryFrom<Vec<GroundTruth>> for GroundTruthSet {
    type Error = Error;
    fn try_from(items: Vec<GroundTruth>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<GroundTruthSet> for Vec<GroundTruth> {
    fn from(set: GroundTruthSet) -> Self {
        set.items
    }
}

/// Default IoU bin bases.
pub const DEFAULT_PSI: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Upper clip applied to every target IoU.
pub const CLIP_MAX: f64 = 0.95;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Binned target-IoU law: bin `i` spans `[psi[i], psi[i + 1])`, the last bin
/// spans `[psi_last, clip_max]`, and `weights[i]` is the chance of bin `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUDistributionSpec {
    psi: Vec<f64>,
    weights: Vec<f64>,
    clip_max: f64,
}

impl IoUDistributionSpec {
    pub fn new(psi: Vec<f64>, weights: Vec<f64>, clip_max: f64) -> Result<Self> {
        if psi.is_empty() {
            return Err(Error::param("psi must contain at least one bin base"));
        }
        if psi.len() != weights.len() {
            return Err(Error::param(format!(
                "expected {} weights (one per bin), got {}",
                psi.len(),
                weights.len()
            )));
        }
        if psi.iter().any(|&p| !(p > 0.0 && p < 1.0)) || psi.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("psi must be strictly ascending inside (0, 1)"));
        }
        let last = psi[psi.len() - 1];
        if !(clip_max > last && clip_max < 1.0) {
            return Err(Error::param(format!(
                "clip_max must lie in ({last}, 1), got {clip_max}"
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::param("weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::param(format!("weights must sum to 1, got {sum}")));
        }
        Ok(Self {
            psi,
            weights,
            clip_max,
        })
    }

    /// Default bases and clip with the given weights.
    pub fn with_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new(DEFAULT_PSI.to_vec(), weights, CLIP_MAX)
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn clip_max(&self) -> f64 {
        self.clip_max
    }

    pub fn bin_count(&self) -> usize {
        self.psi.len()
    }

    pub fn bin_bounds(&self, bin: usize) -> (f64, f64) {
        let hi = self.psi.get(bin + 1).copied().unwrap_or(self.clip_max);
        (self.psi[bin], hi)
    }

    /// Index of the bin holding `iou`, if any.
    pub fn bin_of(&self, iou: f64) -> Option<usize> {
        if iou < self.psi[0] || iou > self.clip_max {
            return None;
        }
        Some(self.psi.partition_point(|&p| p <= iou) - 1)
    }

    /// One target IoU: a bin by weight, then uniform inside it, clipped.
    pub fn draw(&self, rng: &mut SeededRng) -> f64 {
        let bins = WeightedIndex::new(&self.weights).expect("weights validated on construction");
        self.draw_with(&bins, rng)
    }

    fn draw_with(&self, bins: &WeightedIndex<f64>, rng: &mut SeededRng) -> f64 {
        let (lo, hi) = self.bin_bounds(bins.sample(rng));
        rng.uniform_in(lo, hi).min(self.clip_max)
    }
}

/// Weight rows for the default five bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    RightSkew,
    Balanced,
    LeftSkew,
    Balanced06,
    Balanced07,
    Balanced08,
    Balanced09,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::RightSkew,
        Preset::Balanced,
        Preset::LeftSkew,
        Preset::Balanced06,
        Preset::Balanced07,
        Preset::Balanced08,
        Preset::Balanced09,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::RightSkew => "right-skew",
            Preset::Balanced => "balanced",
            Preset::LeftSkew => "left-skew",
            Preset::Balanced06 => "balanced-0.6",
            Preset::Balanced07 => "balanced-0.7",
            Preset::Balanced08 => "balanced-0.8",
            Preset::Balanced09 => "balanced-0.9",
        }
    }

    /// Bin weights as published. The left-skew row sums to 1.05.
    pub fn table_weights(self) -> [f64; 5] {
        match self {
            Preset::RightSkew => [0.02, 0.10, 0.20, 0.30, 0.38],
            Preset::Balanced => [0.33, 0.17, 0.18, 0.17, 0.15],
            Preset::LeftSkew => [0.73, 0.12, 0.15, 0.05, 0.0],
            Preset::Balanced06 => [0.0, 0.38, 0.20, 0.22, 0.20],
            Preset::Balanced07 => [0.0, 0.0, 0.48, 0.25, 0.27],
            Preset::Balanced08 => [0.0, 0.0, 0.0, 0.64, 0.36],
            Preset::Balanced09 => [0.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Table weights scaled to sum to one.
    pub fn weights(self) -> Vec<f64> {
        let raw = self.table_weights();
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|w| w / sum).collect()
    }

    pub fn spec(self) -> IoUDistributionSpec {
        IoUDistributionSpec::with_weights(self.weights()).expect("preset weights are valid")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        // "balanced-0.5" is the same row as "balanced".
        if s == "balanced-0.5" {
            return Ok(Preset::Balanced);
        }
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::param(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// RoI count of one ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// Position of the ground truth in its set.
    pub gt_index: usize,
    pub instance_id: u64,
    pub category_id: u32,
    pub count: usize,
}

/// Per-instance RoI counts, in ground-truth input order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub entries: Vec<Allocation>,
}

impl AllocationPlan {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn per_category(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.category_id).or_insert(0) += e.count;
        }
        out
    }
}

/// Split `n` into `parts` near-equal shares, the first `n % parts` one larger.
fn shares(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    let (q, r) = (n / parts, n % parts);
    (0..parts).map(move |i| q + usize::from(i < r))
}

/// Split `roi_num` equally over categories (ascending id takes the
/// remainder first), then equally over each category's instances (input
/// order takes the remainder first).
pub fn fg_balanced_roi_alloc(gts: &GroundTruthSet, roi_num: usize) -> Result<AllocationPlan> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruths);
    }
    let categories = gts.categories();
    let mut counts = vec![0; gts.len()];
    for (cat, budget) in categories.iter().zip(shares(roi_num, categories.len())) {
        let members: Vec<usize> = (0..gts.len())
            .filter(|&i| gts.items[i].category_id == *cat)
            .collect();
        for (&i, n) in members.iter().zip(shares(budget, members.len())) {
            counts[i] = n;
        }
    }
    let entries = gts
        .items
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(gt_index, (gt, count))| Allocation {
            gt_index,
            instance_id: gt.instance_id,
            category_id: gt.category_id,
            count,
        })
        .collect();
    Ok(AllocationPlan { entries })
}

/// One RoI slot: which ground truth, at which target IoU.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSlot {
    pub gt_index: usize,
    pub instance_id: u64,
    pub target_iou: f64,
}

/// Draw one target per allocated slot, shuffle the targets over the whole
/// batch and pair them with the slots in plan order.
pub fn assign_target_ious(
    plan: &AllocationPlan,
    spec: &IoUDistributionSpec,
    rng: &mut SeededRng,
) -> Vec<TargetSlot> {
    let total = plan.total();
    if total == 0 {
        return Vec::new();
    }
    let bins = WeightedIndex::new(spec.weights()).expect("weights validated on construction");
    let mut targets: Vec<f64> = (0..total).map(|_| spec.draw_with(&bins, rng)).collect();
    targets.shuffle(rng);
    plan.entries
        .iter()
        .flat_map(|e| std::iter::repeat_n(e, e.count))
        .zip(targets)
        .map(|(e, target_iou)| TargetSlot {
            gt_index: e.gt_index,
            instance_id: e.instance_id,
            target_iou,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRoI {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub gt_instance_id: u64,
    pub category_id: u32,
    pub target_iou: f64,
    pub achieved_iou: f64,
}

/// Generate one box per slot. Slot `k` draws from child stream `k` of `rng`.
pub fn gen_rois(
    gts: &GroundTruthSet,
    slots: &[TargetSlot],
    rng: &SeededRng,
    generator: &mut BoxGenerator<'_>,
) -> Result<Vec<GeneratedRoI>> {
    slots
        .iter()
        .enumerate()
        .map(|(k, slot)| {
            let gt = gts.items.get(slot.gt_index).ok_or_else(|| {
                Error::param(format!("slot refers to ground truth #{} of {}", slot.gt_index, gts.len()))
            })?;
            let (bbox, record) = generator
                .generate(&gt.bbox, slot.target_iou, &mut rng.split(k as u64))
                .map_err(|e| Error::InstanceGeneration {
                    instance_id: gt.instance_id,
                    source: Box::new(e),
                })?;
            Ok(GeneratedRoI {
                bbox,
                gt_instance_id: gt.instance_id,
                category_id: gt.category_id,
                target_iou: slot.target_iou,
                achieved_iou: record.achieved_iou,
            })
        })
        .collect()
}

/// Allocation, target assignment and generation in one call. Targets come
/// from child stream 0 of `rng`, boxes from the children of stream 1.
pub fn generate_proi(
    gts: &GroundTruthSet,
    spec: &IoUDistributionSpec,
    roi_num: usize,
    rng: &SeededRng,
    generator: &mut BoxGenerator<'_>,
) -> Result<Vec<GeneratedRoI>> {
    if roi_num == 0 {
        return Ok(Vec::new());
    }
    let plan = fg_balanced_roi_alloc(gts, roi_num)?;
    let slots = assign_target_ious(&plan, spec, &mut rng.split(0));
    gen_rois(gts, &slots, &rng.split(1), generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::default_generator;
    use crate::geometry::iou;

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64, category_id: u32, instance_id: u64) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            category_id,
            instance_id,
        }
    }

    /// 4 bottles (cat 3), 2 persons (cat 1), 2 tables (cat 4), 1 chair (cat 2).
    fn kitchen_batch() -> GroundTruthSet {
        let mut items = Vec::new();
        let mut id = 0;
        for (cat, n) in [(3, 4), (1, 2), (4, 2), (2, 1)] {
            for _ in 0..n {
                let o = id as f64 * 10.0;
                items.push(gt(o, o, o + 30.0, o + 50.0, cat, id));
                id += 1;
            }
        }
        GroundTruthSet::new(items).unwrap()
    }

    #[test]
    fn kitchen_batch_allocation() {
        let plan = fg_balanced_roi_alloc(&kitchen_batch(), 32).unwrap();
        assert_eq!(plan.total(), 32);
        assert!(plan.per_category().values().all(|&n| n == 8));
        let by_cat = |c| -> Vec<usize> {
            plan.entries.iter().filter(|e| e.category_id == c).map(|e| e.count).collect()
        };
        assert_eq!(by_cat(3), vec![2, 2, 2, 2]);
        assert_eq!(by_cat(1), vec![4, 4]);
        assert_eq!(by_cat(4), vec![4, 4]);
        assert_eq!(by_cat(2), vec![8]);
    }

    #[test]
    fn remainders_go_to_lowest_categories_then_first_instances() {
        let set = GroundTruthSet::new(vec![
            gt(0.0, 0.0, 1.0, 1.0, 7, 0),
            gt(0.0, 0.0, 1.0, 1.0, 2, 1),
            gt(0.0, 0.0, 1.0, 1.0, 5, 2),
        ])
        .unwrap();
        let plan = fg_balanced_roi_alloc(&set, 32).unwrap();
        let per = plan.per_category();
        assert_eq!(per[&2], 11);
        assert_eq!(per[&5], 11);
        assert_eq!(per[&7], 10);

        let set = GroundTruthSet::new(vec![
            gt(0.0, 0.0, 1.0, 1.0, 1, 10),
            gt(0.0, 0.0, 1.0, 1.0, 1, 11),
            gt(0.0, 0.0, 1.0, 1.0, 1, 12),
        ])
        .unwrap();
        let counts: Vec<_> = fg_balanced_roi_alloc(&set, 8).unwrap().entries.iter().map(|e| e.count).collect();
        assert_eq!(counts, vec![3, 3, 2]);
    }

    #[test]
    fn single_ground_truth_takes_everything() {
        let set = GroundTruthSet::new(vec![gt(0.0, 0.0, 2.0, 1.0, 1, 0)]).unwrap();
        assert_eq!(fg_balanced_roi_alloc(&set, 32).unwrap().entries[0].count, 32);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(
            fg_balanced_roi_alloc(&GroundTruthSet::default(), 4),
            Err(Error::EmptyGroundTruths)
        ));
    }

    #[test]
    fn set_validation() {
        assert!(GroundTruthSet::new(vec![gt(0.0, 0.0, 1.0, 1.0, 0, 0)]).is_err());
        assert!(GroundTruthSet::new(vec![gt(0.0, 0.0, 1.0, 1.0, 1, 0), gt(0.0, 0.0, 1.0, 1.0, 1, 0)]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(IoUDistributionSpec::with_weights(vec![0.2; 5]).is_ok());
        let err = IoUDistributionSpec::with_weights(vec![0.2, 0.2, 0.2, 0.2, 0.1]).unwrap_err();
        assert!(err.to_string().contains("sum to 1"), "{err}");
        assert!(IoUDistributionSpec::with_weights(vec![0.5, 0.5]).is_err());
        assert!(IoUDistributionSpec::with_weights(vec![1.2, -0.2, 0.0, 0.0, 0.0]).is_err());
        assert!(IoUDistributionSpec::new(vec![0.5, 0.5], vec![0.5, 0.5], 0.95).is_err());
        assert!(IoUDistributionSpec::new(vec![0.5], vec![1.0], 0.4).is_err());
    }

    #[test]
    fn presets_parse_and_normalize() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            let sum: f64 = p.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!("balanced-0.5".parse::<Preset>().unwrap(), Preset::Balanced);
        assert!("uniform".parse::<Preset>().is_err());
        let left = Preset::LeftSkew.weights();
        assert!((left[0] - 0.73 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn bin_lookup() {
        let spec = Preset::Balanced.spec();
        assert_eq!(spec.bin_bounds(0), (0.5, 0.6));
        assert_eq!(spec.bin_bounds(4), (0.9, 0.95));
        assert_eq!(spec.bin_of(0.5), Some(0));
        assert_eq!(spec.bin_of(0.65), Some(1));
        assert_eq!(spec.bin_of(0.95), Some(4));
        assert_eq!(spec.bin_of(0.96), None);
        assert_eq!(spec.bin_of(0.49), None);
    }

    #[test]
    fn top_preset_targets_stay_in_top_bin() {
        let spec = Preset::Balanced09.spec();
        let mut rng = SeededRng::new(3);
        for _ in 0..10_000 {
            let t = spec.draw(&mut rng);
            assert!((0.9..=CLIP_MAX).contains(&t));
        }
    }

    #[test]
    fn targets_pair_with_every_slot() {
        let plan = fg_balanced_roi_alloc(&kitchen_batch(), 32).unwrap();
        let slots = assign_target_ious(&plan, &Preset::Balanced.spec(), &mut SeededRng::new(1));
        assert_eq!(slots.len(), 32);
        for e in &plan.entries {
            assert_eq!(slots.iter().filter(|s| s.instance_id == e.instance_id).count(), e.count);
        }
        assert!(slots.iter().all(|s| (0.5..=CLIP_MAX).contains(&s.target_iou)));
    }

    #[test]
    fn kitchen_batch_generation() {
        let gts = kitchen_batch();
        let mut generator = default_generator();
        let rois = generate_proi(&gts, &Preset::Balanced.spec(), 32, &SeededRng::new(7), &mut generator).unwrap();
        assert_eq!(rois.len(), 32);
        let mut per_cat = BTreeMap::new();
        for r in &rois {
            *per_cat.entry(r.category_id).or_insert(0) += 1;
            let g = gts.items().iter().find(|g| g.instance_id == r.gt_instance_id).unwrap();
            assert_eq!(g.category_id, r.category_id);
            assert_eq!(iou(&g.bbox, &r.bbox), r.achieved_iou);
            assert!(r.achieved_iou >= r.target_iou);
            assert!(r.target_iou <= CLIP_MAX);
        }
        assert!(per_cat.values().all(|&n| n == 8));
        let again = generate_proi(&gts, &Preset::Balanced.spec(), 32, &SeededRng::new(7), &mut generator).unwrap();
        assert_eq!(rois, again);
    }

    #[test]
    fn zero_budget_is_empty() {
        let mut generator = default_generator();
        let out = generate_proi(&kitchen_batch(), &Preset::Balanced.spec(), 0, &SeededRng::new(0), &mut generator);
        assert!(out.unwrap().is_empty());
    }

    #[test]
    fn generation_failures_name_the_instance() {
        let gts = GroundTruthSet::new(vec![gt(0.0, 0.0, 1.0, 1.0, 1, 42)]).unwrap();
        let slots = [TargetSlot {
            gt_index: 0,
            instance_id: 42,
            target_iou: 1.5,
        }];
        let err = gen_rois(&gts, &slots, &SeededRng::new(0), &mut default_generator()).unwrap_err();
        assert!(matches!(err, Error::InstanceGeneration { instance_id: 42, .. }), "{err}");
    }
}
