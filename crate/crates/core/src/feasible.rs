//! Feasible corner regions.
//!
//! For a reference box `b` and threshold `t`, the top-left feasible region is
//! the set of points `p` such that the box `[p, BR(b)]` has IoU at least `t`
//! with `b`. Given a chosen top-left corner `tl`, the bottom-right feasible
//! region is the set of points `q` with `IoU([tl, q], b) >= t`.
//!
//! Each region is bounded by four curves, one per quadrant around the
//! reference corner, on which the IoU equals `t` exactly. A curve is traced by
//! sweeping one coordinate between its bounds and solving the IoU equation for
//! the other. Quadrants (image coordinates, y grows downward):
//!
//! | region | top-left space        | bottom-right space    |
//! |--------|-----------------------|-----------------------|
//! | I      | `u >= x1`, `v <= y1`  | `s >= x2`, `w <= y2`  |
//! | II     | `u >= x1`, `v >= y1`  | `s >= x2`, `w >= y2`  |
//! | III    | `u <= x1`, `v >= y1`  | `s <= x2`, `w >= y2`  |
//! | IV     | `u <= x1`, `v <= y1`  | `s <= x2`, `w <= y2`  |
//!
//! where `(u, v)` is a candidate top-left and `(s, w)` a candidate
//! bottom-right. Top-left region II (corner inside `b`) and bottom-right
//! region IV (corner inside `b`) give nested boxes.
//!
//! Sweep step and simplification tolerance are expressed on the unit frame and
//! scaled by the reference box extents, so results are affine-equivariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Point};
use crate::sampler::point_in_polygon;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CornerKind {
    TopLeft,
    BottomRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    I,
    II,
    III,
    IV,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::I, Region::II, Region::III, Region::IV];
}

/// Precision of the traced boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Sweep increment on the unit frame.
    pub trace_step: f64,
    /// Maximum distance of a dropped trace point from the simplified polyline,
    /// on the unit frame. Zero keeps every traced point.
    pub simplify_tolerance: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            trace_step: 1e-4,
            simplify_tolerance: 1e-6,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trace_step > 0.0 && self.trace_step < 0.5) {
            return Err(Error::param(format!(
                "trace step must lie in (0, 0.5), got {}",
                self.trace_step
            )));
        }
        if !(self.simplify_tolerance >= 0.0 && self.simplify_tolerance.is_finite()) {
            return Err(Error::param("simplify tolerance must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Quantities fixed by the chosen top-left corner when tracing the
/// bottom-right region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrContext {
    /// The chosen top-left corner of the generated box.
    pub tl: Point,
    /// `max(tl.x, b.x1)`: left edge of the intersection.
    pub alpha: f64,
    /// `max(tl.y, b.y1)`: top edge of the intersection.
    pub beta: f64,
}

impl BrContext {
    pub fn new(b: &BBox, tl: Point) -> Self {
        Self {
            tl,
            alpha: tl.x.max(b.x1()),
            beta: tl.y.max(b.y1()),
        }
    }

    /// `min(q.x, b.x2)`: right edge of the intersection for candidate `q`.
    pub fn alpha_hat(&self, b: &BBox, q: Point) -> f64 {
        q.x.min(b.x2())
    }

    /// `min(q.y, b.y2)`: bottom edge of the intersection for candidate `q`.
    pub fn beta_hat(&self, b: &BBox, q: Point) -> f64 {
        q.y.min(b.y2())
    }
}

/// Which corner space a boundary curve belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceSpace {
    TopLeft,
    BottomRight(BrContext),
}

/// A traced boundary curve, in sweep order from the min bound to the max bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub points: Vec<Point>,
    /// Sweep positions dropped because the region equation was not finite there.
    pub skipped: usize,
}

/// Closed polygon approximating a feasible corner region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolygonDoc")]
pub struct FeasiblePolygon {
    corner: CornerKind,
    threshold: f64,
    trace_step: f64,
    /// Corner of the reference box the region surrounds.
    anchor: Point,
    degenerate: bool,
    #[serde(default)]
    skipped_points: usize,
    vertices: Vec<Point>,
    #[serde(skip_serializing)]
    bounds: [f64; 4],
}

#[derive(Deserialize)]
struct PolygonDoc {
    corner: CornerKind,
    threshold: f64,
    trace_step: f64,
    anchor: Point,
    degenerate: bool,
    #[serde(default)]
    skipped_points: usize,
    vertices: Vec<Point>,
}

impl TryFrom<PolygonDoc> for FeasiblePolygon {
    type Error = Error;

    fn try_from(doc: PolygonDoc) -> Result<Self> {
        if doc.degenerate {
            let mut poly = FeasiblePolygon::degenerate(doc.corner, doc.threshold, doc.trace_step, doc.anchor);
            poly.skipped_points = doc.skipped_points;
            return Ok(poly);
        }
        let mut poly =
            FeasiblePolygon::from_vertices(doc.corner, doc.threshold, doc.trace_step, doc.anchor, doc.vertices)?;
        poly.skipped_points = doc.skipped_points;
        Ok(poly)
    }
}

impl FeasiblePolygon {
    /// Build a polygon from an explicit closed ring (first vertex not repeated).
    pub fn from_vertices(
        corner: CornerKind,
        threshold: f64,
        trace_step: f64,
        anchor: Point,
        vertices: Vec<Point>,
    ) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::param("a polygon needs at least three vertices"));
        }
        if vertices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::param("polygon vertices must be finite"));
        }
        let bounds = ring_bounds(&vertices);
        Ok(Self {
            corner,
            threshold,
            trace_step,
            anchor,
            degenerate: false,
            skipped_points: 0,
            vertices,
            bounds,
        })
    }

    fn degenerate(corner: CornerKind, threshold: f64, trace_step: f64, anchor: Point) -> Self {
        Self {
            corner,
            threshold,
            trace_step,
            anchor,
            degenerate: true,
            skipped_points: 0,
            vertices: vec![anchor],
            bounds: [anchor.x, anchor.y, anchor.x, anchor.y],
        }
    }

    pub fn corner(&self) -> CornerKind {
        self.corner
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
    pub fn trace_step(&self) -> f64 {
        self.trace_step
    }
    pub fn anchor(&self) -> Point {
        self.anchor
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    /// True when the region collapsed below trace precision and is represented
    /// by its anchor alone.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
    pub fn skipped_points(&self) -> usize {
        self.skipped_points
    }

    /// `[min_x, min_y, max_x, max_y]` of the vertices.
    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    /// Membership with the boundary counted as inside.
    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(self, p)
    }

    /// Shoelace area of the vertex ring.
    pub fn area(&self) -> f64 {
        shoelace_area(&self.vertices)
    }

    /// Serialize as a JSON polyline document.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Absolute shoelace area of a closed ring given without repeated endpoint.
pub fn shoelace_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, p) in ring.iter().enumerate() {
        let q = ring[(i + 1) % ring.len()];
        twice += p.x * q.y - q.x * p.y;
    }
    0.5 * twice.abs()
}

fn ring_bounds(ring: &[Point]) -> [f64; 4] {
    ring.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |[a, b, c, d], p| [a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)],
    )
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::param(format!("IoU threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// Sweep `[lo, hi]` with spacing at most `step`, endpoints included, solving
/// for the free coordinate with `solve`. `sweep_x` says whether the swept
/// coordinate is x. Returns how many sweep positions were not finite.
fn sweep(
    lo: f64,
    hi: f64,
    step: f64,
    sweep_x: bool,
    solve: impl Fn(f64) -> f64,
    emit: &mut impl FnMut(Point),
) -> usize {
    let hi = hi.max(lo);
    let n = (((hi - lo) / step).ceil() as usize).max(1);
    let span = (hi - lo) / n as f64;
    let mut skipped = 0;
    for i in 0..=n {
        let s = if i == n { hi } else { lo + span * i as f64 };
        let f = solve(s);
        if !f.is_finite() {
            skipped += 1;
            continue;
        }
        emit(if sweep_x { Point::new(s, f) } else { Point::new(f, s) });
    }
    skipped
}

fn trace_with(
    region: Region,
    space: TraceSpace,
    b: &BBox,
    t: f64,
    trace_step: f64,
    emit: &mut impl FnMut(Point),
) -> usize {
    let (x1, y1, x2, y2) = (b.x1(), b.y1(), b.x2(), b.y2());
    let (w, h) = (b.width(), b.height());
    let area = w * h;
    let step_x = trace_step * w;
    let step_y = trace_step * h;

    match space {
        TraceSpace::TopLeft => match region {
            // Intersection (x2 - u) * h does not depend on v.
            Region::I => sweep(
                x1,
                x2 - w * t,
                step_x,
                true,
                |u| {
                    let inter = (x2 - u) * h;
                    y2 - (inter / t + inter - area) / (x2 - u)
                },
                emit,
            ),
            // Nested: IoU = (x2 - u)(y2 - v) / area.
            Region::II => sweep(y1, y2 - h * t, step_y, false, |v| x2 - t * area / (y2 - v), emit),
            Region::III => sweep(
                y1,
                y2 - h * t,
                step_y,
                false,
                |v| {
                    let inter = w * (y2 - v);
                    x2 - (inter / t + inter - area) / (y2 - v)
                },
                emit,
            ),
            // Enclosing: IoU = area / ((x2 - u)(y2 - v)).
            Region::IV => sweep(
                (y2 * (t - 1.0) + y1) / t,
                y1,
                step_y,
                false,
                |v| x2 - area / (t * (y2 - v)),
                emit,
            ),
        },
        TraceSpace::BottomRight(ctx) => {
            let (a, c) = (ctx.tl.x, ctx.tl.y);
            let (alpha, beta) = (ctx.alpha, ctx.beta);
            // Right of x2 and below y2 the intersection is capped by b's corner.
            let excess = |inter: f64| inter * (1.0 + t) / t - area;
            match region {
                Region::I => {
                    let lo = (t * area + (1.0 + t) * (x2 - alpha) * beta - t * c * (x2 - a))
                        / ((1.0 + t) * (x2 - alpha) - t * (x2 - a));
                    sweep(
                        lo,
                        y2,
                        step_y,
                        false,
                        |wy| a + excess((x2 - alpha) * (wy - beta)) / (wy - c),
                        emit,
                    )
                }
                Region::II => {
                    let inter = (x2 - alpha) * (y2 - beta);
                    let hi = a + excess(inter) / (y2 - c);
                    sweep(x2, hi, step_x, true, |s| c + excess(inter) / (s - a), emit)
                }
                Region::III => {
                    let inter = (x2 - alpha) * (y2 - beta);
                    let hi = c + excess(inter) / (x2 - a);
                    let d = y2 - beta;
                    sweep(
                        y2,
                        hi,
                        step_y,
                        false,
                        |wy| {
                            (t * area - t * a * (wy - c) + (1.0 + t) * alpha * d)
                                / ((1.0 + t) * d - t * (wy - c))
                        },
                        emit,
                    )
                }
                Region::IV => {
                    let d = y2 - beta;
                    let lo = (t * area - t * a * (y2 - c) + (1.0 + t) * alpha * d)
                        / ((1.0 + t) * d - t * (y2 - c));
                    sweep(
                        lo,
                        x2,
                        step_x,
                        true,
                        |s| {
                            (t * area - t * c * (s - a) + (1.0 + t) * beta * (s - alpha))
                                / ((1.0 + t) * (s - alpha) - t * (s - a))
                        },
                        emit,
                    )
                }
            }
        }
    }
}

/// Trace the IoU = `t` curve of one region.
pub fn trace_region_boundary(
    region: Region,
    space: TraceSpace,
    b: &BBox,
    t: f64,
    config: &TraceConfig,
) -> Result<Polyline> {
    check_threshold(t)?;
    config.validate()?;
    let mut points = Vec::new();
    let skipped = trace_with(region, space, b, t, config.trace_step, &mut |p| points.push(p));
    Ok(Polyline { points, skipped })
}

/// Streaming decimation of an open polyline: drops points that stay within
/// `tol` of the retained chords, always keeping both endpoints. A wedge of
/// admissible directions from the current anchor is narrowed by every new
/// point and a vertex is emitted when a point falls outside it.
struct Simplifier {
    tol: f64,
    out: Vec<Point>,
    anchor: Point,
    prev: Option<Point>,
    seen: usize,
    // Unnormalised (lo, hi) bounding directions, hi counter-clockwise of lo.
    wedge: Option<((f64, f64), (f64, f64))>,
}

#[inline]
fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

impl Simplifier {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            out: Vec::new(),
            anchor: Point::new(0.0, 0.0),
            prev: None,
            seen: 0,
            wedge: None,
        }
    }

    fn push(&mut self, p: Point) {
        self.seen += 1;
        let Some(prev) = self.prev else {
            self.out.push(p);
            self.anchor = p;
            self.prev = Some(p);
            return;
        };
        self.prev = Some(p);
        if self.tol <= 0.0 {
            self.out.push(prev);
            return;
        }
        let mut d = (p.x - self.anchor.x, p.y - self.anchor.y);
        let tol2 = self.tol * self.tol;
        let mut len2 = d.0 * d.0 + d.1 * d.1;
        if len2 <= tol2 {
            return;
        }
        if let Some((lo, hi)) = self.wedge {
            if cross(lo, d) < 0.0 || cross(d, hi) < 0.0 {
                self.out.push(prev);
                self.anchor = prev;
                self.wedge = None;
                d = (p.x - prev.x, p.y - prev.y);
                len2 = d.0 * d.0 + d.1 * d.1;
                if len2 <= tol2 {
                    return;
                }
            }
        }
        // d rotated by -/+ asin(tol / |d|), scaled by |d|^2.
        let k = (len2 - tol2).sqrt();
        let tol = self.tol;
        let minus = (d.0 * k + d.1 * tol, d.1 * k - d.0 * tol);
        let plus = (d.0 * k - d.1 * tol, d.1 * k + d.0 * tol);
        self.wedge = Some(match self.wedge {
            None => (minus, plus),
            Some((lo, hi)) => (
                if cross(lo, minus) > 0.0 { minus } else { lo },
                if cross(plus, hi) > 0.0 { plus } else { hi },
            ),
        });
    }

    fn finish(mut self) -> Vec<Point> {
        if let (Some(last), true) = (self.prev, self.seen > 1) {
            self.out.push(last);
        }
        self.out
    }
}

#[cfg(test)]
fn simplify_polyline(points: &[Point], tol: f64) -> Vec<Point> {
    let mut s = Simplifier::new(tol);
    for &p in points {
        s.push(p);
    }
    s.finish()
}

/// Concatenate region curves into a ring, dropping repeated seam points.
fn assemble_ring(parts: impl IntoIterator<Item = Vec<Point>>, scale: f64) -> Vec<Point> {
    let eps = 1e-12 * scale;
    let mut ring: Vec<Point> = Vec::new();
    for part in parts {
        for p in part {
            if ring.last().is_none_or(|q| q.distance(p) > eps) {
                ring.push(p);
            }
        }
    }
    while ring.len() > 1 && ring[0].distance(ring[ring.len() - 1]) <= eps {
        ring.pop();
    }
    ring
}

fn build_polygon(
    corner: CornerKind,
    b: &BBox,
    t: f64,
    anchor: Point,
    space: TraceSpace,
    order: [(Region, bool); 4],
    config: &TraceConfig,
) -> Result<FeasiblePolygon> {
    let scale = b.width().max(b.height());
    let mut skipped = 0;
    let mut parts = Vec::with_capacity(4);
    for (region, reversed) in order {
        let mut simplifier = Simplifier::new(config.simplify_tolerance * scale);
        skipped += trace_with(region, space, b, t, config.trace_step, &mut |p| simplifier.push(p));
        let mut pts = simplifier.finish();
        if reversed {
            pts.reverse();
        }
        parts.push(pts);
    }
    let ring = assemble_ring(parts, scale);
    let degenerate = if ring.len() < 3 {
        true
    } else {
        let [min_x, min_y, max_x, max_y] = ring_bounds(&ring);
        let diameter = ((max_x - min_x) / b.width()).max((max_y - min_y) / b.height());
        diameter < 2.0 * config.trace_step
    };
    if degenerate {
        let mut poly = FeasiblePolygon::degenerate(corner, t, config.trace_step, anchor);
        poly.skipped_points = skipped;
        return Ok(poly);
    }
    let mut poly = FeasiblePolygon::from_vertices(corner, t, config.trace_step, anchor, ring)?;
    poly.skipped_points = skipped;
    Ok(poly)
}

/// Polygon of top-left corners `p` with `IoU([p, BR(b)], b) >= t`.
pub fn tl_feasible_polygon(b: &BBox, t: f64, config: &TraceConfig) -> Result<FeasiblePolygon> {
    check_threshold(t)?;
    config.validate()?;
    build_polygon(
        CornerKind::TopLeft,
        b,
        t,
        b.top_left(),
        TraceSpace::TopLeft,
        [
            (Region::I, false),
            (Region::II, false),
            (Region::III, true),
            (Region::IV, true),
        ],
        config,
    )
}

/// IoU deficit below `t` at which a top-left corner still counts as lying on
/// the region boundary rather than outside it.
pub const BOUNDARY_IOU_SLACK: f64 = 1e-4;

/// Polygon of bottom-right corners `q` with `IoU([tl, q], b) >= t`.
///
/// A `tl` on the boundary of the top-left region (within
/// [`BOUNDARY_IOU_SLACK`]) yields the degenerate polygon at `BR(b)`.
pub fn br_feasible_polygon(
    b: &BBox,
    t: f64,
    tl: Point,
    config: &TraceConfig,
) -> Result<FeasiblePolygon> {
    check_threshold(t)?;
    config.validate()?;
    let anchor = b.bottom_right();
    let base = BBox::from_corners(tl, anchor)
        .map(|c| iou(&c, b))
        .unwrap_or(0.0);
    if base < t - BOUNDARY_IOU_SLACK {
        return Err(Error::OutsideFeasibleRegion {
            x: tl.x,
            y: tl.y,
            iou: base,
            threshold: t,
        });
    }
    if base <= t {
        return Ok(FeasiblePolygon::degenerate(
            CornerKind::BottomRight,
            t,
            config.trace_step,
            anchor,
        ));
    }
    build_polygon(
        CornerKind::BottomRight,
        b,
        t,
        anchor,
        TraceSpace::BottomRight(BrContext::new(b, tl)),
        [
            (Region::IV, false),
            (Region::I, false),
            (Region::II, true),
            (Region::III, true),
        ],
        config,
    )
}
