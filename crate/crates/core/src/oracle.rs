//! Brute-force checks for the feasible-space geometry and for sampled
//! frequencies. Nothing here calls the region equations: membership is
//! decided by completing a box and evaluating IoU directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{CornerKind, FeasiblePolygon};
use crate::geometry::{normalize_to, BBox, Point, UNIT_BOX};
use crate::sampler::ring_distance;

/// Default grid pitch as a fraction of the reference box extent.
pub const DEFAULT_PITCH: f64 = 0.005;

/// Regular grid of candidate corner positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point,
    pub step_x: f64,
    pub step_y: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn point(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.origin.x + i as f64 * self.step_x,
            self.origin.y + j as f64 * self.step_y,
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid over `[lo_x, hi_x] x [lo_y, hi_y]` with the given steps.
    pub fn over(lo: Point, hi: Point, step_x: f64, step_y: f64) -> Result<Self> {
        if !(step_x > 0.0 && step_y > 0.0) || !(hi.x >= lo.x && hi.y >= lo.y) {
            return Err(Error::param("grid needs positive steps and an ordered window"));
        }
        Ok(Self {
            origin: lo,
            step_x,
            step_y,
            nx: ((hi.x - lo.x) / step_x).floor() as usize + 1,
            ny: ((hi.y - lo.y) / step_y).floor() as usize + 1,
        })
    }

    /// Grid at `pitch` times the extent of `b`, covering every corner that
    /// could reach IoU `t` with `fixed` as the opposite corner.
    ///
    /// The window uses only the fact that IoU never exceeds the 1-D overlap
    /// ratio along either axis, so it is independent of the region equations.
    pub fn covering(b: &BBox, t: f64, corner: CornerKind, fixed: Point, pitch: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) || !(pitch > 0.0) {
            return Err(Error::param("grid needs t in (0, 1) and a positive pitch"));
        }
        let axis = |lo: f64, hi: f64, anchor: f64| -> (f64, f64) {
            let len = hi - lo;
            match corner {
                // Interval [u, hi] against [lo, hi]: ratio min/max of lengths.
                CornerKind::TopLeft => (hi - len / t, hi - t * len),
                // Interval [anchor, s] against [lo, hi].
                CornerKind::BottomRight => {
                    let start = anchor.max(lo);
                    let outer = anchor.min(lo);
                    (start + t * (hi - outer), outer + (hi - start) / t)
                }
            }
        };
        let (x_lo, x_hi) = axis(b.x1(), b.x2(), fixed.x);
        let (y_lo, y_hi) = axis(b.y1(), b.y2(), fixed.y);
        let (sx, sy) = (pitch * b.width(), pitch * b.height());
        // Two pitches of margin so the outermost feasible points sit inside.
        Self::over(
            Point::new(x_lo - 2.0 * sx, y_lo - 2.0 * sy),
            Point::new(x_hi.max(x_lo) + 2.0 * sx, y_hi.max(y_lo) + 2.0 * sy),
            sx,
            sy,
        )
    }
}

/// IoU of two `[x1, y1, x2, y2]` boxes, written out longhand.
fn plain_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / (area_a + area_b - inter)
}

/// Oracle membership of every grid point, row-major with x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleField {
    pub grid: GridSpec,
    pub corner: CornerKind,
    pub inside: Vec<bool>,
}

impl OracleField {
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.inside[j * self.grid.nx + i]
    }

    pub fn count_inside(&self) -> usize {
        self.inside.iter().filter(|&&v| v).count()
    }
}

/// Mark grid points whose completed box reaches IoU `t` with `b`. For a
/// top-left field `fixed` is the bottom-right corner and vice versa.
pub fn brute_force_corner_region(
    b: &BBox,
    t: f64,
    corner: CornerKind,
    fixed: Point,
    grid: &GridSpec,
) -> OracleField {
    let reference = b.to_array();
    let mut inside = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let p = grid.point(i, j);
            let (tl, br) = match corner {
                CornerKind::TopLeft => (p, fixed),
                CornerKind::BottomRight => (fixed, p),
            };
            let ok = tl.x < br.x && tl.y < br.y && plain_iou([tl.x, tl.y, br.x, br.y], reference) >= t;
            inside.push(ok);
        }
    }
    OracleField {
        grid: *grid,
        corner,
        inside,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub point: Point,
    pub oracle_inside: bool,
    pub polygon_inside: bool,
    /// Distance to the polygon boundary on the frame normalized to `b`.
    pub boundary_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub checked: usize,
    /// Disagreements explained by proximity to the boundary.
    pub near_boundary: usize,
    /// Disagreements farther than the tolerance from the boundary.
    pub disagreements: Vec<Discrepancy>,
}

impl DiscrepancyReport {
    pub fn passed(&self) -> bool {
        self.disagreements.is_empty()
    }
}

/// Even-odd membership for every point of one grid row, via the sorted
/// crossings of the row line with the ring.
fn row_membership(ring: &[Point], grid: &GridSpec, y: f64, out: &mut Vec<bool>) {
    let mut xs = Vec::new();
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let (a, c) = (ring[j], ring[i]);
        if (a.y > y) != (c.y > y) {
            xs.push(a.x + (y - a.y) * (c.x - a.x) / (c.y - a.y));
        }
        j = i;
    }
    xs.sort_by(f64::total_cmp);
    let mut k = 0;
    for i in 0..grid.nx {
        let x = grid.origin.x + i as f64 * grid.step_x;
        while k < xs.len() && xs[k] < x {
            k += 1;
        }
        out.push(k % 2 == 1);
    }
}

/// Compare polygon membership with an oracle field. Disagreements within
/// `boundary_tolerance` of the polygon boundary, measured on the frame
/// normalized to `b`, are tolerated.
pub fn compare_polygon_to_oracle(
    polygon: &FeasiblePolygon,
    b: &BBox,
    field: &OracleField,
    boundary_tolerance: f64,
) -> DiscrepancyReport {
    let to_unit = normalize_to(b, &UNIT_BOX);
    let ring: Vec<Point> = polygon
        .vertices()
        .iter()
        .map(|&v| to_unit.apply_point(v))
        .collect();
    let grid = &field.grid;
    let mut report = DiscrepancyReport {
        checked: grid.len(),
        ..Default::default()
    };
    let mut row = Vec::with_capacity(grid.nx);
    for j in 0..grid.ny {
        row.clear();
        let y = grid.origin.y + j as f64 * grid.step_y;
        if ring.len() >= 3 {
            row_membership(polygon.vertices(), grid, y, &mut row);
        } else {
            row.resize(grid.nx, false);
        }
        for (i, &poly_in) in row.iter().enumerate() {
            let oracle_in = field.at(i, j);
            if poly_in == oracle_in {
                continue;
            }
            let p = grid.point(i, j);
            let q = to_unit.apply_point(p);
            let d = if ring.len() >= 3 {
                ring_distance(&ring, q)
            } else {
                q.distance(ring[0])
            };
            if d <= boundary_tolerance {
                report.near_boundary += 1;
            } else {
                report.disagreements.push(Discrepancy {
                    point: p,
                    oracle_inside: oracle_in,
                    polygon_inside: poly_in,
                    boundary_distance: d,
                });
            }
        }
    }
    report
}

/// Observed bin frequencies against an expected law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionCheck {
    pub n: u64,
    pub frequencies: Vec<f64>,
    pub max_abs_deviation: f64,
    /// Pearson statistic over bins with positive expectation; infinite if a
    /// zero-probability bin was observed.
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub passed: bool,
}

/// Pass when every bin frequency is within `tolerance` of `expected`.
pub fn empirical_distribution_check(counts: &[u64], expected: &[f64], tolerance: f64) -> Result<DistributionCheck> {
    if counts.len() != expected.len() || counts.is_empty() {
        return Err(Error::param("counts and expected law must have the same non-zero length"));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::param("no samples to check"));
    }
    let nf = n as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    let max_abs_deviation = frequencies
        .iter()
        .zip(expected)
        .map(|(f, e)| (f - e).abs())
        .fold(0.0, f64::max);
    let mut chi_square = 0.0;
    let mut support = 0;
    for (&c, &p) in counts.iter().zip(expected) {
        if p > 0.0 {
            let e = nf * p;
            chi_square += (c as f64 - e).powi(2) / e;
            support += 1;
        } else if c > 0 {
            chi_square = f64::INFINITY;
        }
    }
    Ok(DistributionCheck {
        n,
        frequencies,
        max_abs_deviation,
        chi_square,
        degrees_of_freedom: support.max(1) - 1,
        passed: max_abs_deviation <= tolerance,
    })
}
