//! Rejection sampling of points inside a feasible polygon.
//!
//! A proposal distribution draws candidate points over the polygon's
//! enclosing rectangle; candidates are accepted once they land inside the
//! polygon. The proposal therefore shapes the spatial distribution of the
//! accepted points (uniform proposal gives points uniform over the polygon).

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::feasible::FeasiblePolygon;
use crate::geometry::{BBox, Point};
use crate::rng::SeededRng;

/// Points within this distance of an edge count as inside.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Default number of proposals before sampling is abandoned.
pub const DEFAULT_ATTEMPT_BUDGET: usize = 10_000;

/// Candidate generator over a rectangle.
///
/// Implementations must give nonzero density to every interior point of
/// `rect`, otherwise rejection sampling may never terminate.
pub trait Proposal {
    fn propose(&self, rect: &BBox, anchor: Point, rng: &mut SeededRng) -> Point;
}

/// Uniform over the enclosing rectangle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UniformProposal;

impl Proposal for UniformProposal {
    fn propose(&self, rect: &BBox, _anchor: Point, rng: &mut SeededRng) -> Point {
        Point::new(
            rng.uniform_in(rect.x1(), rect.x2()),
            rng.uniform_in(rect.y1(), rect.y2()),
        )
    }
}

/// Gaussian centered on the reference corner, truncated to the rectangle.
///
/// `sigma` is a fraction of the rectangle extent per axis. After
/// `max_tries` draws outside the rectangle it falls back to a uniform draw,
/// which keeps the density positive everywhere in the rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianCornerProposal {
    pub sigma: f64,
    pub max_tries: usize,
}

impl GaussianCornerProposal {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("gaussian proposal sigma must be positive"));
        }
        Ok(Self { sigma, max_tries: 64 })
    }
}

impl Proposal for GaussianCornerProposal {
    fn propose(&self, rect: &BBox, anchor: Point, rng: &mut SeededRng) -> Point {
        let nx = Normal::new(anchor.x, self.sigma * rect.width()).expect("positive sigma");
        let ny = Normal::new(anchor.y, self.sigma * rect.height()).expect("positive sigma");
        for _ in 0..self.max_tries {
            let p = Point::new(nx.sample(rng), ny.sample(rng));
            if (rect.x1()..rect.x2()).contains(&p.x) && (rect.y1()..rect.y2()).contains(&p.y) {
                return p;
            }
        }
        UniformProposal.propose(rect, anchor, rng)
    }
}

/// Minimal axis-aligned rectangle around the polygon; `None` for a
/// degenerate (single-point) polygon.
pub fn enclosing_rectangle(p: &FeasiblePolygon) -> Option<BBox> {
    if p.is_degenerate() {
        return None;
    }
    let [x1, y1, x2, y2] = p.bounds();
    BBox::new(x1, y1, x2, y2).ok()
}

/// Even-odd membership test; points within [`BOUNDARY_TOLERANCE`] of an edge
/// are inside.
pub fn point_in_polygon(p: &FeasiblePolygon, q: Point) -> bool {
    let [x1, y1, x2, y2] = p.bounds();
    let tol = BOUNDARY_TOLERANCE;
    if q.x < x1 - tol || q.x > x2 + tol || q.y < y1 - tol || q.y > y2 + tol {
        return false;
    }
    let ring = p.vertices();
    if ring.len() < 3 {
        return ring.iter().any(|v| v.distance(q) <= tol);
    }
    if ring_contains(ring, q) {
        return true;
    }
    ring_distance(ring, q) <= tol
}

/// Ray-crossing parity test, boundary excluded.
pub(crate) fn ring_contains(ring: &[Point], q: Point) -> bool {
    let mut inside = false;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub(crate) fn segment_distance(q: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return q.distance(a);
    }
    let s = (((q.x - a.x) * dx + (q.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    q.distance(Point::new(a.x + s * dx, a.y + s * dy))
}

/// Distance from `q` to the closest edge of a closed ring.
pub fn ring_distance(ring: &[Point], q: Point) -> f64 {
    let mut best = f64::INFINITY;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        best = best.min(segment_distance(q, ring[j], ring[i]));
        j = i;
    }
    best
}

/// Outcome of one rejection-sampling run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub point: Point,
    /// Proposals drawn, including the accepted one. Zero for degenerate polygons.
    pub proposals: usize,
}

/// Draw a point inside `p` by rejection sampling from `proposal`.
pub fn sample_polygon(
    p: &FeasiblePolygon,
    proposal: &dyn Proposal,
    rng: &mut SeededRng,
    attempt_budget: usize,
) -> Result<Sample> {
    let Some(rect) = enclosing_rectangle(p) else {
        return Ok(Sample {
            point: p.vertices()[0],
            proposals: 0,
        });
    };
    for n in 1..=attempt_budget {
        let q = proposal.propose(&rect, p.anchor(), rng);
        if point_in_polygon(p, q) {
            return Ok(Sample {
                point: q,
                proposals: n,
            });
        }
    }
    Err(Error::SamplingFailed {
        attempts: attempt_budget,
        area_ratio: p.area() / (rect.width() * rect.height()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasible::{tl_feasible_polygon, CornerKind, TraceConfig};
    use crate::geometry::UNIT_BOX;

    fn square() -> FeasiblePolygon {
        FeasiblePolygon::from_vertices(
            CornerKind::TopLeft,
            0.5,
            1e-4,
            Point::new(0.0, 0.0),
            vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ],
        )
        .unwrap()
    }

    /// 2x2 square minus its top-right quarter: 75% of the rectangle.
    fn l_shape() -> FeasiblePolygon {
        FeasiblePolygon::from_vertices(
            CornerKind::TopLeft,
            0.5,
            1e-4,
            Point::new(0.0, 0.0),
            vec![
                Point::new(0.0, 0.0),
                Point::new(2.0, 0.0),
                Point::new(2.0, 1.0),
                Point::new(1.0, 1.0),
                Point::new(1.0, 2.0),
                Point::new(0.0, 2.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn enclosing_rectangle_of_square() {
        assert_eq!(enclosing_rectangle(&square()).unwrap(), UNIT_BOX);
    }

    #[test]
    fn enclosing_rectangle_contains_all_vertices() {
        let poly = tl_feasible_polygon(&UNIT_BOX, 0.75, &TraceConfig::default()).unwrap();
        let rect = enclosing_rectangle(&poly).unwrap();
        for v in poly.vertices() {
            assert!(v.x >= rect.x1() && v.x <= rect.x2() && v.y >= rect.y1() && v.y <= rect.y2());
        }
        // extremes of the t = 0.75 region: u in [1 - 1/t, 1 - t], same for v
        assert!((rect.x1() - (1.0 - 1.0 / 0.75)).abs() < 1e-12);
        assert!((rect.x2() - 0.25).abs() < 1e-12);
        assert!((rect.y1() - (1.0 - 1.0 / 0.75)).abs() < 1e-12);
        assert!((rect.y2() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn membership_basics() {
        let sq = square();
        assert!(point_in_polygon(&sq, Point::new(0.5, 0.5)));
        assert!(point_in_polygon(&sq, Point::new(1.0, 0.5)));
        assert!(point_in_polygon(&sq, Point::new(1.0 + 5e-10, 0.5)));
        assert!(!point_in_polygon(&sq, Point::new(1.0 + 1e-6, 0.5)));
        assert!(!point_in_polygon(&sq, Point::new(3.0, 3.0)));
        let l = l_shape();
        assert!(!point_in_polygon(&l, Point::new(1.5, 1.5)));
        assert!(point_in_polygon(&l, Point::new(0.5, 1.5)));
    }

    #[test]
    fn degenerate_polygon_returns_its_point() {
        let poly = tl_feasible_polygon(&UNIT_BOX, 0.99999, &TraceConfig::default()).unwrap();
        assert!(poly.is_degenerate());
        assert!(enclosing_rectangle(&poly).is_none());
        let mut rng = SeededRng::new(3);
        let s = sample_polygon(&poly, &UniformProposal, &mut rng, 10).unwrap();
        assert_eq!(s.point, UNIT_BOX.top_left());
        assert_eq!(s.proposals, 0);
    }

    #[test]
    fn unit_square_accepts_everything() {
        let sq = square();
        let mut rng = SeededRng::new(11);
        let n = 100_000;
        let (mut sx, mut sy, mut proposals) = (0.0, 0.0, 0);
        for _ in 0..n {
            let s = sample_polygon(&sq, &UniformProposal, &mut rng, DEFAULT_ATTEMPT_BUDGET).unwrap();
            sx += s.point.x;
            sy += s.point.y;
            proposals += s.proposals;
        }
        assert_eq!(proposals, n);
        assert!((sx / n as f64 - 0.5).abs() < 0.01);
        assert!((sy / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn l_shape_acceptance_rate_matches_area_ratio() {
        let l = l_shape();
        let mut rng = SeededRng::new(12);
        let n = 100_000;
        let proposals: usize = (0..n)
            .map(|_| sample_polygon(&l, &UniformProposal, &mut rng, DEFAULT_ATTEMPT_BUDGET).unwrap().proposals)
            .sum();
        let rate = n as f64 / proposals as f64;
        assert!((rate - 0.75).abs() < 0.02, "{rate}");
    }

    #[test]
    fn exhausted_budget_reports_failure() {
        struct Outside;
        impl Proposal for Outside {
            fn propose(&self, rect: &BBox, _: Point, _: &mut SeededRng) -> Point {
                Point::new(rect.x2() + 1.0, rect.y2() + 1.0)
            }
        }
        let mut rng = SeededRng::new(0);
        let err = sample_polygon(&square(), &Outside, &mut rng, 50).unwrap_err();
        match err {
            Error::SamplingFailed { attempts, area_ratio } => {
                assert_eq!(attempts, 50);
                assert!((area_ratio - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn gaussian_proposal_stays_in_rectangle_and_is_deterministic() {
        let poly = tl_feasible_polygon(&UNIT_BOX, 0.6, &TraceConfig::default()).unwrap();
        let prop = GaussianCornerProposal::new(0.1).unwrap();
        let rect = enclosing_rectangle(&poly).unwrap();
        let draw = |seed| {
            let mut rng = SeededRng::new(seed);
            (0..200)
                .map(|_| sample_polygon(&poly, &prop, &mut rng, DEFAULT_ATTEMPT_BUDGET).unwrap().point)
                .collect::<Vec<_>>()
        };
        let a = draw(5);
        assert_eq!(a, draw(5));
        let mean_dist: f64 = a.iter().map(|p| p.distance(poly.anchor())).sum::<f64>() / a.len() as f64;
        assert!(mean_dist < 0.2 * rect.width().max(rect.height()));
        assert!(a.iter().all(|p| poly.contains(*p)));
        assert!(GaussianCornerProposal::new(0.0).is_err());
    }
}
