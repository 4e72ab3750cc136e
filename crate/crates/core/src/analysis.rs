//! Distribution studies: achieved-IoU histograms per RoI source, nested
//! feasible-boundary contours, and spatial occupancy of corner points.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::{tl_feasible_polygon, FeasiblePolygon, TraceConfig};
use crate::generator::{check_threshold, BoxGenerator};
use crate::geometry::{BBox, Point, UNIT_BOX};
use crate::proi::{Preset, CLIP_MAX, DEFAULT_PSI};
use crate::rng::SeededRng;
use crate::sampler::ring_distance;

/// Default histogram edges: the five target bins plus the above-clip tail.
pub fn default_edges() -> Vec<f64> {
    let mut edges = DEFAULT_PSI.to_vec();
    edges.extend([CLIP_MAX, 1.0]);
    edges
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUHistogram {
    pub source: String,
    /// Bin `i` is `[edges[i], edges[i + 1])`; the last bin also holds its upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub sample_size: u64,
}

impl IoUHistogram {
    /// Bin `values` over `edges`. Values below the first edge get an extra
    /// leading bin from 0, so counts always sum to the sample size.
    pub fn from_values(source: impl Into<String>, values: &[f64], edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("histogram edges must be strictly ascending, at least two"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("IoU value {v} outside [0, 1]")));
        }
        let mut edges = edges.to_vec();
        if edges[0] > 0.0 && values.iter().any(|&v| v < edges[0]) {
            edges.insert(0, 0.0);
        }
        let last = edges.len() - 2;
        let mut counts = vec![0u64; edges.len() - 1];
        for &v in values {
            let bin = edges.partition_point(|&e| e <= v).saturating_sub(1).min(last);
            counts[bin] += 1;
        }
        Ok(Self {
            source: source.into(),
            edges,
            counts,
            sample_size: values.len() as u64,
        })
    }

    /// Count per unit IoU width, normalized by the sample size.
    pub fn density(&self) -> Vec<f64> {
        let n = self.sample_size.max(1) as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
            .collect()
    }

    /// Fraction of the sample at or above `edge` (which must be a bin edge).
    pub fn mass_from(&self, edge: f64) -> f64 {
        let start = self.edges.partition_point(|&e| e < edge);
        let c: u64 = self.counts[start.min(self.counts.len())..].iter().sum();
        c as f64 / self.sample_size.max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "lo", "hi", "count", "density"])
            .map_err(csv_error)?;
        for ((c, d), e) in self.counts.iter().zip(self.density()).zip(self.edges.windows(2)) {
            w.write_record([
                self.source.clone(),
                e[0].to_string(),
                e[1].to_string(),
                c.to_string(),
                format!("{d:.9}"),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::param(format!("csv: {other:?}")),
    }
}

/// Where target IoUs come from when building a histogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoiSource {
    Preset(Preset),
    /// Every target fixed at this threshold.
    Base(f64),
}

impl fmt::Display for RoiSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoiSource::Preset(p) => write!(f, "{p}"),
            RoiSource::Base(t) => write!(f, "base:{t}"),
        }
    }
}

impl FromStr for RoiSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(t) = s.strip_prefix("base:") {
            let t: f64 = t
                .parse()
                .map_err(|_| Error::param(format!("bad base threshold in {s:?}")))?;
            check_threshold(t)?;
            return Ok(RoiSource::Base(t));
        }
        s.parse().map(RoiSource::Preset)
    }
}

/// Generate `n` boxes around the unit box from `source` and bin their
/// achieved IoUs. Box `i` uses child stream `i` of `rng` for both its target
/// and its geometry.
pub fn iou_histogram(
    source: RoiSource,
    n: usize,
    rng: &SeededRng,
    generator: &mut BoxGenerator<'_>,
) -> Result<IoUHistogram> {
    if n == 0 {
        return Err(Error::param("histogram sample size must be at least 1"));
    }
    let spec = match source {
        RoiSource::Preset(p) => Some(p.spec()),
        RoiSource::Base(t) => {
            check_threshold(t)?;
            None
        }
    };
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.split(i as u64);
        let t = match (&spec, source) {
            (Some(spec), _) => spec.draw(&mut r),
            (None, RoiSource::Base(t)) => t,
            (None, RoiSource::Preset(_)) => unreachable!(),
        };
        let (_, record) = generator.generate(&UNIT_BOX, t, &mut r)?;
        values.push(record.achieved_iou);
    }
    IoUHistogram::from_values(source.to_string(), &values, &default_edges())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub level: f64,
    pub area: f64,
    pub polygon: FeasiblePolygon,
}

/// Top-left feasible boundaries of one reference box at several IoU levels,
/// ordered by ascending level (outermost first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourFamily {
    pub reference: BBox,
    pub contours: Vec<Contour>,
}

impl ContourFamily {
    /// True when every contour lies strictly inside the one before it and
    /// areas strictly decrease.
    pub fn is_strictly_nested(&self) -> bool {
        self.contours.windows(2).all(|w| {
            let (outer, inner) = (&w[0], &w[1]);
            inner.area < outer.area
                && inner.polygon.vertices().iter().all(|&v| {
                    outer.polygon.contains(v)
                        && (outer.polygon.is_degenerate()
                            || ring_distance(outer.polygon.vertices(), v) > 0.0)
                })
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn boundary_contours(reference: &BBox, levels: &[f64], config: &TraceConfig) -> Result<ContourFamily> {
    if levels.is_empty() {
        return Err(Error::param("at least one contour level is required"));
    }
    let mut levels = levels.to_vec();
    for &l in &levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::param(format!("contour level must lie in (0, 1), got {l}")));
        }
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let contours = levels
        .into_iter()
        .map(|level| {
            let polygon = tl_feasible_polygon(reference, level, config)?;
            Ok(Contour {
                level,
                area: polygon.area(),
                polygon,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ContourFamily {
        reference: *reference,
        contours,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelOccupancy {
    pub level: f64,
    pub inside_fraction: f64,
}

/// Share of points in each quadrant around the reference top-left corner.
/// Region II is `x > x1, y > y1` (corner inside the box), region IV is
/// `x < x1, y < y1`; points on either axis are counted separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadrantFractions {
    pub region_i: f64,
    pub region_ii: f64,
    pub region_iii: f64,
    pub region_iv: f64,
    pub on_axis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialReport {
    pub reference: BBox,
    pub points: usize,
    pub levels: Vec<LevelOccupancy>,
    pub quadrants: QuadrantFractions,
}

pub fn quadrant_fractions(points: &[Point], reference: &BBox) -> QuadrantFractions {
    let mut q = QuadrantFractions::default();
    if points.is_empty() {
        return q;
    }
    let (x1, y1) = (reference.x1(), reference.y1());
    for p in points {
        let slot = match (p.x.total_cmp(&x1), p.y.total_cmp(&y1)) {
            (std::cmp::Ordering::Greater, std::cmp::Ordering::Less) => &mut q.region_i,
            (std::cmp::Ordering::Greater, std::cmp::Ordering::Greater) => &mut q.region_ii,
            (std::cmp::Ordering::Less, std::cmp::Ordering::Greater) => &mut q.region_iii,
            (std::cmp::Ordering::Less, std::cmp::Ordering::Less) => &mut q.region_iv,
            _ => &mut q.on_axis,
        };
        *slot += 1.0;
    }
    let n = points.len() as f64;
    for v in [
        &mut q.region_i,
        &mut q.region_ii,
        &mut q.region_iii,
        &mut q.region_iv,
        &mut q.on_axis,
    ] {
        *v /= n;
    }
    q
}

/// Fraction of `points` inside each level's top-left polygon, plus quadrant
/// occupancy around the reference top-left corner.
pub fn spatial_stats(
    points: &[Point],
    reference: &BBox,
    levels: &[f64],
    config: &TraceConfig,
) -> Result<SpatialReport> {
    if let Some(p) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::param(format!("non-finite point ({}, {})", p.x, p.y)));
    }
    let family = boundary_contours(reference, levels, config)?;
    let n = points.len().max(1) as f64;
    let levels = family
        .contours
        .iter()
        .map(|c| LevelOccupancy {
            level: c.level,
            inside_fraction: points.iter().filter(|&&p| c.polygon.contains(p)).count() as f64 / n,
        })
        .collect();
    Ok(SpatialReport {
        reference: *reference,
        points: points.len(),
        levels,
        quadrants: quadrant_fractions(points, reference),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::default_generator;

    #[test]
    fn histogram_binning() {
        let h = IoUHistogram::from_values("x", &[0.5, 0.59, 0.6, 0.95, 1.0, 0.93], &default_edges()).unwrap();
        assert_eq!(h.counts, vec![2, 1, 0, 0, 1, 2]);
        assert_eq!(h.sample_size, 6);
        let h = IoUHistogram::from_values("x", &[0.2, 0.7], &default_edges()).unwrap();
        assert_eq!(h.edges[0], 0.0);
        assert_eq!(h.counts.iter().sum::<u64>(), 2);
        assert!(IoUHistogram::from_values("x", &[1.2], &default_edges()).is_err());
        assert!(IoUHistogram::from_values("x", &[0.5], &[0.6, 0.5]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let h = IoUHistogram::from_values("x", &[0.51, 0.66, 0.77, 0.91, 0.97], &default_edges()).unwrap();
        let total: f64 = h.density().iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((h.mass_from(0.8) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let h = IoUHistogram::from_values("base:0.5", &[0.51, 0.66], &default_edges()).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("source,lo,hi,count,density\nbase:0.5,0.5,0.6,1,"));
    }

    #[test]
    fn source_parsing() {
        assert_eq!("base:0.5".parse::<RoiSource>().unwrap(), RoiSource::Base(0.5));
        assert_eq!("left-skew".parse::<RoiSource>().unwrap(), RoiSource::Preset(Preset::LeftSkew));
        assert!("base:1.5".parse::<RoiSource>().is_err());
        assert!("base:x".parse::<RoiSource>().is_err());
    }

    #[test]
    fn top_preset_fills_top_bins_only() {
        let h = iou_histogram(RoiSource::Preset(Preset::Balanced09), 300, &SeededRng::new(1), &mut default_generator())
            .unwrap();
        assert_eq!(h.counts[..4].iter().sum::<u64>(), 0);
        assert_eq!(h.counts.iter().sum::<u64>(), 300);
    }

    #[test]
    fn contours_nest_on_the_reference_box() {
        let reference = BBox::new(0.3, 0.3, 0.6, 0.6).unwrap();
        let fam = boundary_contours(&reference, &[0.9, 0.5, 0.7, 0.6, 0.8], &TraceConfig::default()).unwrap();
        assert_eq!(fam.contours.len(), 5);
        assert!(fam.is_strictly_nested());
        assert!(fam.contours[4].area < fam.contours[0].area);
        let again = boundary_contours(&reference, &[0.5, 0.6, 0.7, 0.8, 0.9], &TraceConfig::default()).unwrap();
        assert_eq!(fam.to_json().unwrap(), again.to_json().unwrap());
        assert!(boundary_contours(&reference, &[1.0], &TraceConfig::default()).is_err());
    }

    #[test]
    fn generated_corners_sit_inside_their_level() {
        let b = BBox::new(0.3, 0.3, 0.6, 0.6).unwrap();
        let mut generator = default_generator();
        let rng = SeededRng::new(3);
        let points: Vec<Point> = (0..500)
            .map(|i| generator.generate(&b, 0.5, &mut rng.split(i)).unwrap().0.top_left())
            .collect();
        let report = spatial_stats(&points, &b, &[0.5], &TraceConfig::default()).unwrap();
        assert_eq!(report.levels[0].inside_fraction, 1.0);
        let q = report.quadrants;
        let total = q.region_i + q.region_ii + q.region_iii + q.region_iv + q.on_axis;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_corner_is_inside_every_level() {
        let b = BBox::new(0.3, 0.3, 0.6, 0.6).unwrap();
        let report = spatial_stats(&[b.top_left()], &b, &[0.5, 0.7, 0.9], &TraceConfig::default()).unwrap();
        assert!(report.levels.iter().all(|l| l.inside_fraction == 1.0));
        assert_eq!(report.quadrants.on_axis, 1.0);
    }
}
