//! File formats: ground-truth ingestion (COCO-style JSON or a simple CSV),
//! JSON Lines output, and the run configuration written next to outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};
use crate::proi::{GeneratedRoI, GroundTruth, GroundTruthSet};

/// Image id used for CSV input, which has no notion of images.
pub const CSV_IMAGE_ID: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotationFormat {
    Coco,
    Csv,
}

impl FromStr for AnnotationFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coco" | "coco-json" => Ok(Self::Coco),
            "csv" | "simple-csv" => Ok(Self::Csv),
            _ => Err(Error::param(format!("unknown annotation format {s:?}; expected coco or csv"))),
        }
    }
}

impl AnnotationFormat {
    /// Guess from the file extension: `.json` is COCO, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Coco,
            _ => Self::Csv,
        }
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Ground truths per image id. Every image of a COCO file gets an entry,
/// possibly empty.
pub fn load_ground_truths(path: &Path, format: AnnotationFormat) -> Result<BTreeMap<u64, GroundTruthSet>> {
    match format {
        AnnotationFormat::Coco => load_coco(path),
        AnnotationFormat::Csv => load_csv(path),
    }
}

fn load_coco(path: &Path) -> Result<BTreeMap<u64, GroundTruthSet>> {
    let reader = BufReader::new(File::open(path)?);
    let doc: CocoFile = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        path: display(path),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut by_image: BTreeMap<u64, Vec<GroundTruth>> =
        doc.images.iter().map(|img| (img.id, Vec::new())).collect();
    for ann in doc.annotations {
        let invalid = |reason: String| Error::InvalidAnnotation {
            id: ann.id.to_string(),
            reason,
        };
        let [x, y, w, h] = ann.bbox;
        if !(w > 0.0 && h > 0.0) {
            return Err(invalid(format!("bbox width and height must be positive, got {w} x {h}")));
        }
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| invalid(e.to_string()))?;
        let items = by_image
            .get_mut(&ann.image_id)
            .ok_or_else(|| invalid(format!("refers to missing image {}", ann.image_id)))?;
        items.push(GroundTruth {
            bbox,
            category_id: ann.category_id,
            instance_id: ann.id,
        });
    }
    by_image
        .into_iter()
        .map(|(id, items)| Ok((id, GroundTruthSet::new(items)?)))
        .collect()
}

/// CSV rows `x1,y1,x2,y2,cat=N`. Blank lines and lines starting with `#`
/// are ignored; the data row number (from 0) becomes the instance id.
fn load_csv(path: &Path) -> Result<BTreeMap<u64, GroundTruthSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut items = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |field: usize, message: String| Error::Parse {
            path: display(path),
            line,
            column: field_column(&record, field),
            message,
        };
        if record.len() != 5 {
            return Err(fail(0, format!("expected 5 fields (x1,y1,x2,y2,cat=N), found {}", record.len())));
        }
        let mut coords = [0.0; 4];
        for (k, c) in coords.iter_mut().enumerate() {
            *c = record[k]
                .parse()
                .map_err(|_| fail(k, format!("not a number: {:?}", &record[k])))?;
        }
        let category_id: u32 = record[4]
            .strip_prefix("cat=")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| fail(4, format!("expected cat=N, found {:?}", &record[4])))?;
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| Error::InvalidAnnotation {
            id: row.to_string(),
            reason: format!("line {line}: {e}"),
        })?;
        items.push(GroundTruth {
            bbox,
            category_id,
            instance_id: row as u64,
        });
    }
    let mut out = BTreeMap::new();
    out.insert(CSV_IMAGE_ID, GroundTruthSet::new(items)?);
    Ok(out)
}

/// 1-based character column where `field` starts, counting trimmed fields.
fn field_column(record: &csv::StringRecord, field: usize) -> usize {
    1 + record.iter().take(field).map(|f| f.chars().count() + 1).sum::<usize>()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (line, column) = e
        .position()
        .map_or((0, 0), |p| (p.line() as usize, 1));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: display(path),
            line,
            column,
            message: format!("{kind:?}"),
        },
    }
}

/// Points as CSV rows `x,y`; `#` comments and blank lines are ignored.
pub fn load_points(path: &Path) -> Result<Vec<Point>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse = |k: usize| -> Result<f64> {
            record.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                path: display(path),
                line,
                column: field_column(&record, k),
                message: "expected a row x,y of two numbers".into(),
            })
        };
        if record.len() != 2 {
            return Err(Error::Parse {
                path: display(path),
                line,
                column: 1,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        out.push(Point::new(parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Write `path` through a temporary file in the same directory, so readers
/// never see a partial file and a failed write leaves nothing behind.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// One JSON document per line, fields in declaration order.
pub fn write_jsonl<T: Serialize>(items: &[T], out: &mut dyn Write) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display(path),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_rois(rois: &[GeneratedRoI], path: &Path) -> Result<()> {
    write_atomic(path, |w| write_jsonl(rois, w))
}

pub fn read_rois(path: &Path) -> Result<Vec<GeneratedRoI>> {
    read_jsonl(path)
}

/// Everything needed to rerun a command, written as `<output>.config.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub trace_step: f64,
    pub simplify_tolerance: f64,
    pub attempt_budget: usize,
    pub verify_retries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nms_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi_num: Option<usize>,
    /// Remaining command-specific arguments.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunConfig {
    pub fn sidecar_path(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.json");
        PathBuf::from(name)
    }

    pub fn write_sidecar(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::sidecar_path(output);
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
        Ok(path)
    }
}
