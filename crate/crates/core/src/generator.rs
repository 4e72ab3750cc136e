//! Generation of a single box overlapping a reference box with IoU at least `t`.
//!
//! Work happens on the unit frame: the reference box is mapped onto
//! `[0, 0, 1, 1]`, a top-left corner is sampled from its feasible polygon,
//! then a bottom-right corner from the feasible polygon induced by that
//! top-left corner. The result is mapped back. A fair coin picks between
//! this order and the reverse one (bottom-right first), which is realised by
//! reflecting the unit-frame result through the box center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{br_feasible_polygon, tl_feasible_polygon, FeasiblePolygon, TraceConfig};
use crate::geometry::{iou, normalize_to, reflect_about_center, BBox, UNIT_BOX};
use crate::rng::SeededRng;
use crate::sampler::{sample_polygon, Proposal, UniformProposal, DEFAULT_ATTEMPT_BUDGET};

/// Largest threshold the generator accepts.
pub const MAX_THRESHOLD: f64 = 0.999;

/// Contract tolerance on achieved IoU, equal to the default trace step.
pub const IOU_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CornerOrder {
    TlFirst,
    BrFirst,
}

/// Provenance of one generated box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub reference: BBox,
    pub threshold: f64,
    pub order: CornerOrder,
    pub achieved_iou: f64,
    pub proposals_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub trace: TraceConfig,
    /// Proposals allowed per polygon sample.
    pub attempt_budget: usize,
    /// Extra full draws allowed when a draw fails IoU re-verification.
    pub verify_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            trace: TraceConfig::default(),
            attempt_budget: DEFAULT_ATTEMPT_BUDGET,
            verify_retries: 5,
        }
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= MAX_THRESHOLD) {
        return Err(Error::param(format!(
            "IoU threshold must lie in (0, {MAX_THRESHOLD}], got {t}"
        )));
    }
    Ok(())
}

/// Reusable generator. Keeps the most recent top-left polygon so repeated
/// draws at one threshold trace it only once.
pub struct BoxGenerator<'p> {
    config: GeneratorConfig,
    proposal: &'p dyn Proposal,
    tl_cache: Option<FeasiblePolygon>,
}

impl<'p> BoxGenerator<'p> {
    pub fn new(config: GeneratorConfig, proposal: &'p dyn Proposal) -> Result<Self> {
        config.trace.validate()?;
        if config.attempt_budget == 0 {
            return Err(Error::param("attempt budget must be at least 1"));
        }
        Ok(Self {
            config,
            proposal,
            tl_cache: None,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    fn tl_polygon(&mut self, t: f64) -> Result<&FeasiblePolygon> {
        let stale = self
            .tl_cache
            .as_ref()
            .is_none_or(|p| p.threshold().to_bits() != t.to_bits());
        if stale {
            self.tl_cache = Some(tl_feasible_polygon(&UNIT_BOX, t, &self.config.trace)?);
        }
        Ok(self.tl_cache.as_ref().expect("cache filled above"))
    }

    /// One draw of a box with `iou(b, result) >= t`.
    pub fn generate(&mut self, b: &BBox, t: f64, rng: &mut SeededRng) -> Result<(BBox, GenerationRecord)> {
        check_threshold(t)?;
        let order = if rng.coin() {
            CornerOrder::TlFirst
        } else {
            CornerOrder::BrFirst
        };
        let to_unit = normalize_to(b, &UNIT_BOX);
        let budget = self.config.attempt_budget;
        let trace = self.config.trace;
        let proposal = self.proposal;

        let mut proposals_used = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for _ in 0..=self.config.verify_retries {
            let tl_poly = self.tl_polygon(t)?;
            let tl = sample_polygon(tl_poly, proposal, rng, budget)?;
            proposals_used += tl.proposals;
            let br_poly = br_feasible_polygon(&UNIT_BOX, t, tl.point, &trace)?;
            let br = sample_polygon(&br_poly, proposal, rng, budget)?;
            proposals_used += br.proposals;

            let Ok(unit) = BBox::from_corners(tl.point, br.point) else {
                continue;
            };
            let unit_iou = iou(&UNIT_BOX, &unit);
            best_iou = best_iou.max(unit_iou);
            if unit_iou < t {
                continue;
            }
            let unit = match order {
                CornerOrder::TlFirst => unit,
                CornerOrder::BrFirst => reflect_about_center(&unit, &UNIT_BOX),
            };
            let out = to_unit.invert(&unit)?;
            let record = GenerationRecord {
                reference: *b,
                threshold: t,
                order,
                achieved_iou: iou(b, &out),
                proposals_used,
            };
            return Ok((out, record));
        }
        Err(Error::VerificationFailed {
            tries: self.config.verify_retries + 1,
            best_iou,
            threshold: t,
        })
    }
}

/// Generate one box with `iou(b, result) >= t` using default precision.
pub fn generate_bb(
    b: &BBox,
    t: f64,
    rng: &mut SeededRng,
    proposal: &dyn Proposal,
) -> Result<(BBox, GenerationRecord)> {
    BoxGenerator::new(GeneratorConfig::default(), proposal)?.generate(b, t, rng)
}

/// Generate `count` boxes, the `i`-th from child stream `i` of `rng`.
pub fn generate_many(
    b: &BBox,
    t: f64,
    count: usize,
    rng: &SeededRng,
    config: GeneratorConfig,
    proposal: &dyn Proposal,
) -> Result<Vec<(BBox, GenerationRecord)>> {
    let mut generator = BoxGenerator::new(config, proposal)?;
    (0..count)
        .map(|i| generator.generate(b, t, &mut rng.split(i as u64)))
        .collect()
}

/// Uniform-proposal generator with default configuration.
pub fn default_generator() -> BoxGenerator<'static> {
    static UNIFORM: UniformProposal = UniformProposal;
    BoxGenerator::new(GeneratorConfig::default(), &UNIFORM).expect("default config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineMap;

    #[test]
    fn thousand_draws_at_point_six_respect_threshold() {
        let b = BBox::new(120.0, 40.0, 260.0, 310.0).unwrap();
        let out = generate_many(&b, 0.6, 1000, &SeededRng::new(9), GeneratorConfig::default(), &UniformProposal).unwrap();
        assert_eq!(out.len(), 1000);
        for (bx, rec) in &out {
            let v = iou(&b, bx);
            assert!(v >= 0.6 - IOU_TOLERANCE, "{v}");
            assert_eq!(v, rec.achieved_iou);
            assert_eq!(rec.threshold, 0.6);
        }
        // no upper bound is imposed
        assert!(out.iter().any(|(_, r)| r.achieved_iou > 0.7));
        assert!(out.iter().any(|(_, r)| r.order == CornerOrder::TlFirst));
        assert!(out.iter().any(|(_, r)| r.order == CornerOrder::BrFirst));
    }

    #[test]
    fn half_threshold_draw_on_arbitrary_reference() {
        let b = BBox::new(0.21, 0.34, 0.58, 0.77).unwrap();
        let mut rng = SeededRng::new(2020);
        let (bx, rec) = generate_bb(&b, 0.5, &mut rng, &UniformProposal).unwrap();
        assert!(iou(&b, &bx) >= 0.5);
        assert!(rec.proposals_used >= 2);
    }

    #[test]
    fn threshold_near_one_hugs_the_reference() {
        let b = BBox::new(-5.0, 3.0, 15.0, 8.0).unwrap();
        let mut generator = default_generator();
        let mut rng = SeededRng::new(4);
        for _ in 0..200 {
            let (bx, rec) = generator.generate(&b, 0.99, &mut rng).unwrap();
            assert!(rec.achieved_iou >= 0.99);
            assert!(bx.center().distance(b.center()) < 0.01 * b.diagonal());
        }
    }

    #[test]
    fn invalid_thresholds_are_rejected() {
        let mut rng = SeededRng::new(0);
        for t in [0.0, -0.1, 0.9995, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                generate_bb(&UNIT_BOX, t, &mut rng, &UniformProposal),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn generation_is_affine_equivariant() {
        let b = BBox::new(0.2, 0.1, 0.9, 0.4).unwrap();
        let m = AffineMap::new(37.0, 120.0, -4.0, 18.5).unwrap();
        let mb = m.apply(&b).unwrap();
        for seed in 0..50 {
            let (x, _) = generate_bb(&b, 0.7, &mut SeededRng::new(seed), &UniformProposal).unwrap();
            let (y, _) = generate_bb(&mb, 0.7, &mut SeededRng::new(seed), &UniformProposal).unwrap();
            let mx = m.apply(&x).unwrap();
            for (p, q) in mx.to_array().iter().zip(y.to_array()) {
                assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()), "{mx:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn same_seed_same_box() {
        let b = BBox::new(1.0, 2.0, 3.0, 5.0).unwrap();
        let a = generate_many(&b, 0.8, 20, &SeededRng::new(77), GeneratorConfig::default(), &UniformProposal).unwrap();
        let c = generate_many(&b, 0.8, 20, &SeededRng::new(77), GeneratorConfig::default(), &UniformProposal).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn cache_follows_threshold_changes() {
        let mut generator = default_generator();
        let mut rng = SeededRng::new(8);
        for t in [0.5, 0.9, 0.5, 0.75] {
            let (_, rec) = generator.generate(&UNIT_BOX, t, &mut rng).unwrap();
            assert!(rec.achieved_iou >= t);
        }
    }
}
