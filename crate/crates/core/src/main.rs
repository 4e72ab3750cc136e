use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use bbgen::analysis::{boundary_contours, iou_histogram, spatial_stats, RoiSource};
use bbgen::balanced::{iou_hardness, ofb_sample_indices, ohpm_select_scored, LabeledRoI, DEFAULT_NMS_IOU};
use bbgen::feasible::{br_feasible_polygon, tl_feasible_polygon, CornerKind, TraceConfig};
use bbgen::generator::{BoxGenerator, CornerOrder, GeneratorConfig};
use bbgen::io::{
    load_ground_truths, load_points, read_jsonl, read_rois, write_atomic, write_jsonl, AnnotationFormat, RunConfig,
};
use bbgen::oracle::{brute_force_corner_region, compare_polygon_to_oracle, GridSpec, DEFAULT_PITCH};
use bbgen::proi::{generate_proi, GeneratedRoI, GroundTruthSet, IoUDistributionSpec, Preset};
use bbgen::sampler::{GaussianCornerProposal, Proposal, UniformProposal, DEFAULT_ATTEMPT_BUDGET};
use bbgen::{BBox, Error, Point, Result, SeededRng};

#[derive(Parser)]
#[command(name = "bbgen", version, about = "Generate boxes with a guaranteed minimum IoU to a reference box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boxes overlapping one reference box with IoU >= T.
    GenBb {
        #[arg(long = "ref", value_parser = parse_box)]
        reference: BBox,
        #[arg(long)]
        iou: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Class-balanced positive RoIs for every image of an annotation file.
    GenProi {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        format: Option<AnnotationFormat>,
        #[command(flatten)]
        law: LawArgs,
        #[arg(long)]
        roi_num: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Nested top-left feasible boundaries of a reference box as JSON.
    FeasibleSpace {
        #[arg(long = "ref", value_parser = parse_box)]
        reference: BBox,
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9")]
        levels: FloatList,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        trace_step: f64,
    },
    /// Achieved-IoU histogram of a RoI source, as CSV.
    IouHist {
        /// Preset name or base:T.
        #[arg(long)]
        source: RoiSource,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Foreground-balanced sample from a RoI file.
    OfbSample {
        #[arg(long)]
        rois: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        without_replacement: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hard positives: generate a pool, score, NMS, keep the top.
    Ohpm {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        format: Option<AnnotationFormat>,
        #[command(flatten)]
        law: LawArgs,
        #[arg(long, default_value_t = 128)]
        pool: usize,
        #[arg(long, default_value_t = 32)]
        keep: usize,
        #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
        nms_iou: f64,
        /// One score per line, in pool order (images by ascending id).
        #[arg(long, conflicts_with = "default_scorer")]
        scores: Option<PathBuf>,
        /// Score by 1 - achieved IoU.
        #[arg(long)]
        default_scorer: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Occupancy of corner points against feasible boundaries.
    SpatialStats {
        /// CSV rows x,y.
        #[arg(long)]
        points: PathBuf,
        #[arg(long = "ref", value_parser = parse_box)]
        reference: BBox,
        #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9")]
        levels: FloatList,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        trace_step: f64,
    },
    /// Check a traced polygon against the brute-force grid oracle.
    Verify {
        #[arg(long = "ref", value_parser = parse_box)]
        reference: BBox,
        #[arg(long)]
        iou: f64,
        /// Check the bottom-right polygon for this top-left corner instead.
        #[arg(long, value_parser = parse_point)]
        tl: Option<Point>,
        #[arg(long, default_value_t = DEFAULT_PITCH)]
        pitch: f64,
        #[arg(long, default_value_t = 1e-4)]
        trace_step: f64,
    },
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 1e-4)]
    trace_step: f64,
    #[arg(long, default_value_t = DEFAULT_ATTEMPT_BUDGET)]
    attempt_budget: usize,
    /// uniform, or gaussian:SIGMA with SIGMA a fraction of the rectangle.
    #[arg(long, default_value = "uniform")]
    proposal: String,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct LawArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    weights: Option<FloatList>,
}

/// Comma-separated numbers.
#[derive(Clone, Debug)]
struct FloatList(Vec<f64>);

impl std::str::FromStr for FloatList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_list(s).map(FloatList)
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("not a number: {v:?}")))
        .collect()
}

fn parse_box(s: &str) -> std::result::Result<BBox, String> {
    match parse_list(s)?[..] {
        [x1, y1, x2, y2] => BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string()),
        _ => Err("expected x1,y1,x2,y2".into()),
    }
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    match parse_list(s)?[..] {
        [x, y] => Ok(Point::new(x, y)),
        _ => Err("expected x,y".into()),
    }
}

impl GenArgs {
    fn config(&self) -> GeneratorConfig {
        GeneratorConfig {
            trace: TraceConfig {
                trace_step: self.trace_step,
                ..TraceConfig::default()
            },
            attempt_budget: self.attempt_budget,
            ..GeneratorConfig::default()
        }
    }

    fn proposal(&self) -> Result<Box<dyn Proposal>> {
        if self.proposal == "uniform" {
            return Ok(Box::new(UniformProposal));
        }
        let sigma = self
            .proposal
            .strip_prefix("gaussian:")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown proposal {:?}", self.proposal)))?;
        Ok(Box::new(GaussianCornerProposal::new(sigma)?))
    }

    fn run_config(&self, command: &str, seed: Option<u64>) -> RunConfig {
        let cfg = self.config();
        let mut args = BTreeMap::new();
        args.insert("proposal".into(), json!(self.proposal));
        RunConfig {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            trace_step: cfg.trace.trace_step,
            simplify_tolerance: cfg.trace.simplify_tolerance,
            attempt_budget: cfg.attempt_budget,
            verify_retries: cfg.verify_retries,
            args,
            ..RunConfig::default()
        }
    }
}

impl LawArgs {
    fn spec(&self) -> Result<IoUDistributionSpec> {
        match (&self.preset, &self.weights) {
            (Some(p), _) => Ok(p.spec()),
            (None, Some(w)) => IoUDistributionSpec::with_weights(w.0.clone()),
            (None, None) => Err(Error::InvalidParameter("either --preset or --weights is required".into())),
        }
    }

    fn record(&self, cfg: &mut RunConfig) {
        cfg.preset = self.preset.map(|p| p.to_string());
        cfg.weights = self.weights.as_ref().map(|w| w.0.clone());
    }
}

fn plain_run_config(command: &str, seed: Option<u64>, trace_step: f64) -> RunConfig {
    let defaults = GeneratorConfig::default();
    RunConfig {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        trace_step,
        simplify_tolerance: defaults.trace.simplify_tolerance,
        attempt_budget: defaults.attempt_budget,
        verify_retries: defaults.verify_retries,
        ..RunConfig::default()
    }
}

/// Write to `out` atomically with a config sidecar, or to stdout.
fn emit(out: Option<&Path>, mut cfg: RunConfig, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
        Some(path) => {
            write_atomic(path, fill)?;
            cfg.outputs.push(path.to_path_buf());
            if let Err(e) = cfg.write_sidecar(path) {
                let _ = std::fs::remove_file(path);
                return Err(e);
            }
            Ok(())
        }
    }
}

fn load_gts(path: &Path, format: Option<AnnotationFormat>) -> Result<BTreeMap<u64, GroundTruthSet>> {
    let format = format.unwrap_or_else(|| AnnotationFormat::from_path(path));
    let sets = load_ground_truths(path, format)?;
    if sets.values().all(|s| s.is_empty()) {
        eprintln!("warning: {} holds no ground truths", path.display());
    }
    Ok(sets)
}

/// RoIs for every non-empty image, image `id` drawing from child stream `id`.
fn proi_over_images(
    sets: &BTreeMap<u64, GroundTruthSet>,
    spec: &IoUDistributionSpec,
    roi_num: usize,
    seed: u64,
    generator: &mut BoxGenerator<'_>,
) -> Result<Vec<GeneratedRoI>> {
    let root = SeededRng::new(seed);
    let mut out = Vec::new();
    for (&image_id, gts) in sets {
        if gts.is_empty() {
            continue;
        }
        out.extend(generate_proi(gts, spec, roi_num, &root.split(image_id), generator)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct BoxLine {
    #[serde(rename = "box")]
    bbox: BBox,
    achieved_iou: f64,
    order: CornerOrder,
}

fn write_json<T: Serialize>(value: &T, w: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenBb {
            reference,
            iou,
            count,
            seed,
            out,
            gen,
        } => {
            let proposal = gen.proposal()?;
            let mut generator = BoxGenerator::new(gen.config(), proposal.as_ref())?;
            let root = SeededRng::new(seed);
            let lines = (0..count)
                .map(|i| {
                    let (bbox, rec) = generator.generate(&reference, iou, &mut root.split(i as u64))?;
                    Ok(BoxLine {
                        bbox,
                        achieved_iou: rec.achieved_iou,
                        order: rec.order,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut cfg = gen.run_config("gen-bb", Some(seed));
            cfg.args.insert("ref".into(), json!(reference));
            cfg.args.insert("iou".into(), json!(iou));
            cfg.args.insert("count".into(), json!(count));
            emit(out.as_deref(), cfg, |w| write_jsonl(&lines, w))?;
        }
        Command::GenProi {
            gt,
            format,
            law,
            roi_num,
            seed,
            out,
            gen,
        } => {
            let spec = law.spec()?;
            let sets = load_gts(&gt, format)?;
            let proposal = gen.proposal()?;
            let mut generator = BoxGenerator::new(gen.config(), proposal.as_ref())?;
            let rois = proi_over_images(&sets, &spec, roi_num, seed, &mut generator)?;
            let mut cfg = gen.run_config("gen-proi", Some(seed));
            law.record(&mut cfg);
            cfg.roi_num = Some(roi_num);
            cfg.inputs.push(gt);
            emit(out.as_deref(), cfg, |w| write_jsonl(&rois, w))?;
        }
        Command::FeasibleSpace {
            reference,
            levels,
            out,
            trace_step,
        } => {
            let trace = TraceConfig {
                trace_step,
                ..TraceConfig::default()
            };
            let levels = levels.0;
            let family = boundary_contours(&reference, &levels, &trace)?;
            let mut cfg = plain_run_config("feasible-space", None, trace_step);
            cfg.args.insert("ref".into(), json!(reference));
            cfg.args.insert("levels".into(), json!(levels));
            emit(out.as_deref(), cfg, |w| write_json(&family, w))?;
        }
        Command::IouHist {
            source,
            n,
            seed,
            out,
            gen,
        } => {
            let proposal = gen.proposal()?;
            let mut generator = BoxGenerator::new(gen.config(), proposal.as_ref())?;
            let hist = iou_histogram(source, n, &SeededRng::new(seed), &mut generator)?;
            let mut cfg = gen.run_config("iou-hist", Some(seed));
            cfg.args.insert("source".into(), json!(source.to_string()));
            cfg.args.insert("n".into(), json!(n));
            emit(out.as_deref(), cfg, |w| hist.write_csv(w))?;
        }
        Command::OfbSample {
            rois,
            n,
            seed,
            without_replacement,
            out,
        } => {
            let pool = read_rois(&rois)?;
            let labeled: Vec<LabeledRoI> = pool.iter().map(LabeledRoI::from).collect();
            let picked = ofb_sample_indices(&labeled, n, &mut SeededRng::new(seed), !without_replacement)?;
            let picked: Vec<GeneratedRoI> = picked.into_iter().map(|i| pool[i]).collect();
            let mut cfg = plain_run_config("ofb-sample", Some(seed), TraceConfig::default().trace_step);
            cfg.args.insert("n".into(), json!(n));
            cfg.args.insert("with_replacement".into(), json!(!without_replacement));
            cfg.inputs.push(rois);
            emit(out.as_deref(), cfg, |w| write_jsonl(&picked, w))?;
        }
        Command::Ohpm {
            gt,
            format,
            law,
            pool,
            keep,
            nms_iou,
            scores,
            default_scorer,
            seed,
            out,
            gen,
        } => {
            if scores.is_none() && !default_scorer {
                return Err(Error::InvalidParameter("either --scores or --default-scorer is required".into()));
            }
            if keep == 0 || pool < keep {
                return Err(Error::InvalidParameter(format!(
                    "need pool >= keep >= 1, got pool={pool}, keep={keep}"
                )));
            }
            let spec = law.spec()?;
            let sets = load_gts(&gt, format)?;
            let proposal = gen.proposal()?;
            let mut generator = BoxGenerator::new(gen.config(), proposal.as_ref())?;
            let candidates = proi_over_images(&sets, &spec, pool, seed, &mut generator)?;
            let all_scores: Vec<f64> = match &scores {
                Some(path) => read_jsonl(path)?,
                None => candidates.iter().map(iou_hardness).collect(),
            };
            if all_scores.len() != candidates.len() {
                return Err(Error::InvalidAnnotation {
                    id: scores.as_ref().map_or_else(String::new, |p| p.display().to_string()),
                    reason: format!("{} scores for {} pool RoIs", all_scores.len(), candidates.len()),
                });
            }
            // Selection runs per image, over that image's slice of the pool.
            let mut selected = Vec::new();
            let mut start = 0;
            for _ in sets.values().filter(|s| !s.is_empty()) {
                let end = start + pool;
                selected.extend(ohpm_select_scored(
                    &candidates[start..end],
                    &all_scores[start..end],
                    keep,
                    nms_iou,
                )?);
                start = end;
            }
            let mut cfg = gen.run_config("ohpm", Some(seed));
            law.record(&mut cfg);
            cfg.nms_iou = Some(nms_iou);
            cfg.roi_num = Some(pool);
            cfg.args.insert("keep".into(), json!(keep));
            cfg.inputs.push(gt);
            cfg.inputs.extend(scores);
            emit(out.as_deref(), cfg, |w| write_jsonl(&selected, w))?;
        }
        Command::SpatialStats {
            points,
            reference,
            levels,
            out,
            trace_step,
        } => {
            let levels = levels.0;
            let pts = load_points(&points)?;
            let trace = TraceConfig {
                trace_step,
                ..TraceConfig::default()
            };
            let report = spatial_stats(&pts, &reference, &levels, &trace)?;
            let mut cfg = plain_run_config("spatial-stats", None, trace_step);
            cfg.args.insert("ref".into(), json!(reference));
            cfg.args.insert("levels".into(), json!(levels));
            cfg.inputs.push(points);
            emit(out.as_deref(), cfg, |w| write_json(&report, w))?;
        }
        Command::Verify {
            reference,
            iou,
            tl,
            pitch,
            trace_step,
        } => {
            let trace = TraceConfig {
                trace_step,
                ..TraceConfig::default()
            };
            let (polygon, corner, fixed) = match tl {
                None => (
                    tl_feasible_polygon(&reference, iou, &trace)?,
                    CornerKind::TopLeft,
                    reference.bottom_right(),
                ),
                Some(p) => (br_feasible_polygon(&reference, iou, p, &trace)?, CornerKind::BottomRight, p),
            };
            let grid = GridSpec::covering(&reference, iou, corner, fixed, pitch)?;
            let field = brute_force_corner_region(&reference, iou, corner, fixed, &grid);
            let report = compare_polygon_to_oracle(&polygon, &reference, &field, 2.0 * trace_step);
            let summary = json!({
                "corner": corner,
                "checked": report.checked,
                "oracle_inside": field.count_inside(),
                "near_boundary": report.near_boundary,
                "disagreements": report.disagreements,
                "passed": report.passed(),
            });
            write_json(&summary, &mut std::io::stdout().lock())?;
            if !report.passed() {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_generation_failure() {
        return 4;
    }
    match e {
        Error::InvalidParameter(_) | Error::InvalidBox { .. } | Error::OutsideFeasibleRegion { .. } => 2,
        Error::InstanceGeneration { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
