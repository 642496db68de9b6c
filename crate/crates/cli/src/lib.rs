//! Command-line surface of masksplitter.
//!
//! Exit codes: 0 on success, 1 on I/O or validation failure, 2 on a usage
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use masksplitter::dataset::{
    crop_around_instance, isodata_threshold, synth_scene_with, CropSpec, GrayImage, SynthConfig,
};
use masksplitter::head::{AdamConfig, BadCountTarget};
use masksplitter::io::{self, Manifest};
use masksplitter::metrics::{ap_at, ap_sweep, detections_from_mask, ImageEval};
use masksplitter::training::{ToyConfig, ToyProblem};
use masksplitter::{binarize_scores, split_binary, Connectivity, ScoreMapPair};

/// Largest gradient-check error `train-toy --grad-check` accepts.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "masksplitter",
    version,
    about = "Split, evaluate and train on binarized instance masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify prediction blobs against ground truth
    Split(SplitArgs),
    /// Average precision over one or more manifests
    Eval(EvalArgs),
    /// Train the head on a synthetic scene and write the loss curve
    TrainToy(TrainArgs),
    /// Print the ISODATA threshold of an 8-bit image
    Isodata(IsodataArgs),
    /// Cut a square crop around every instance
    Crop(CropArgs),
    /// Generate a synthetic scene
    Synth(SynthArgs),
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    let n: u8 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    Connectivity::try_from(n).map_err(|e| e.to_string())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(',')
        .ok_or_else(|| format!("expected H,W, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Binary prediction mask (P5, nonzero = foreground)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map (P5)
    #[arg(long)]
    gt: PathBuf,
    /// Overlap means IoU strictly above this value
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CSV manifest; repeat for several runs, one table row each
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Comma-separated IoU thresholds; `sweep` is the 0.50:0.95 mean
    #[arg(long, default_value = "0.5,0.7,sweep")]
    thresholds: String,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    #[arg(long, default_value = "report.csv")]
    report: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BadTargetArg {
    Splitter,
    Zero,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene size as H,W
    #[arg(long, default_value = "16,16", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    /// Loss curve CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verify the analytic gradient against central differences first
    #[arg(long)]
    grad_check: bool,
    #[arg(long, default_value_t = 3)]
    instances: usize,
    #[arg(long, default_value_t = 0.3)]
    occlusion: f64,
    #[arg(long, value_enum, default_value_t = BadTargetArg::Splitter)]
    bad_target: BadTargetArg,
}

#[derive(Debug, Args)]
struct IsodataArgs {
    #[arg(long)]
    image: PathBuf,
}

#[derive(Debug, Args)]
struct CropArgs {
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 250)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of instances
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    occlusion: f64,
    /// Scene size as H,W
    #[arg(long, default_value = "64,64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0.35)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Split(a) => split(a),
        Command::Eval(a) => eval(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Isodata(a) => isodata(a),
        Command::Crop(a) => crop(a),
        Command::Synth(a) => synth(a),
    }
}

#[derive(Debug, Serialize)]
struct Counts {
    n_good: u32,
    n_bad_type1: u32,
    n_bad_type2: u32,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn split(a: SplitArgs) -> Result<()> {
    if !(a.threshold >= 0.0 && a.threshold < 1.0) {
        bail!("--threshold must be in [0, 1), got {}", a.threshold);
    }
    let pred = io::read_mask(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let gt = io::read_labels(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    let r = split_binary(&pred, &gt, a.connectivity, a.threshold)?;

    create_dir(&a.out)?;
    io::write_mask(a.out.join("good.pgm"), &r.good_mask)?;
    io::write_mask(a.out.join("bad1.pgm"), &r.bad1_mask)?;
    io::write_mask(a.out.join("bad2.pgm"), &r.bad2_mask)?;
    let counts = Counts {
        n_good: r.n_good,
        n_bad_type1: r.n_bad_type1,
        n_bad_type2: r.n_bad_type2,
    };
    let mut json = serde_json::to_string(&counts)?;
    json.push('\n');
    fs::write(a.out.join("counts.json"), &json)?;
    print!("{json}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    At(f64),
    Sweep,
}

impl Column {
    fn label(self) -> String {
        match self {
            Column::At(t) => format!("AP@{t}"),
            Column::Sweep => "AP@0.5:0.95".to_string(),
        }
    }
}

fn parse_columns(spec: &str) -> Result<Vec<Column>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|tok| {
            if tok.eq_ignore_ascii_case("sweep") {
                return Ok(Column::Sweep);
            }
            let t: f64 = tok
                .parse()
                .with_context(|| format!("bad threshold {tok:?}"))?;
            if !(t > 0.0 && t <= 1.0) {
                bail!("threshold {t} outside (0, 1]");
            }
            Ok(Column::At(t))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|cols| {
            if cols.is_empty() {
                bail!("no thresholds given");
            }
            Ok(cols)
        })
}

fn load_run(manifest_path: &Path, connectivity: Connectivity) -> Result<Vec<ImageEval>> {
    let manifest = Manifest::read(manifest_path)
        .with_context(|| format!("reading manifest {}", manifest_path.display()))?;
    manifest
        .records
        .iter()
        .map(|rec| {
            let pred = io::read_mask(&rec.prediction)
                .with_context(|| format!("reading {}", rec.prediction.display()))?;
            let gt = io::read_labels(&rec.ground_truth)
                .with_context(|| format!("reading {}", rec.ground_truth.display()))?;
            let scores = match &rec.scores {
                Some(p) => Some(io::read_detection_scores(p)?),
                None => None,
            };
            let detections = detections_from_mask(&pred, connectivity, scores.as_deref())
                .with_context(|| format!("detections of {}", rec.prediction.display()))?;
            Ok(ImageEval { detections, gt })
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let columns = parse_columns(&a.thresholds)?;
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for path in &a.manifest {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let images = load_run(path, a.connectivity)?;
        let sweep = if columns.contains(&Column::Sweep) {
            Some(ap_sweep(&images)?)
        } else {
            None
        };
        let values = columns
            .iter()
            .map(|c| match (c, &sweep) {
                (Column::Sweep, Some(r)) => Ok(r.ap50_95),
                (Column::At(t), Some(r)) if r.at(*t).is_some() => Ok(r.at(*t).unwrap_or_default()),
                (Column::At(t), _) => Ok(ap_at(&images, *t)?),
                (Column::Sweep, None) => unreachable!("sweep computed when requested"),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((name, values));
    }

    let labels: Vec<String> = columns.iter().map(|c| c.label()).collect();
    print!("{}", format_table(&labels, &rows));

    let mut w = csv::Writer::from_path(&a.report)
        .with_context(|| format!("writing {}", a.report.display()))?;
    let mut header = vec!["run".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (name, values) in &rows {
        let mut rec = vec![name.clone()];
        rec.extend(values.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn format_table(labels: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once(3))
        .max()
        .unwrap_or(3);
    let widths: Vec<usize> = labels.iter().map(|l| l.len().max(5)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "run");
    for (l, w) in labels.iter().zip(&widths) {
        let _ = write!(out, "  {l:>w$}");
    }
    out.push('\n');
    for (name, values) in rows {
        let _ = write!(out, "{name:<name_w$}");
        for (v, w) in values.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", format!("{v:.3}"));
        }
        out.push('\n');
    }
    out
}

fn train_toy(a: TrainArgs) -> Result<()> {
    let (h, w) = a.size;
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        bail!("--lr must be positive, got {}", a.lr);
    }
    let mut cfg = ToyConfig::new(h, w, a.seed);
    cfg.n_instances = a.instances;
    cfg.occlusion = a.occlusion;
    cfg.bad_target = match a.bad_target {
        BadTargetArg::Splitter => BadCountTarget::SplitterCounts,
        BadTargetArg::Zero => BadCountTarget::Zero,
    };
    let mut problem = ToyProblem::new(&cfg)?;
    let (g, b1, b2) = problem.split.counts();
    println!(
        "scene {h}x{w} seed {}: {} instances, split counts good={g} bad1={b1} bad2={b2}",
        a.seed,
        problem.gt.count()
    );

    let mut grad_failure = None;
    if a.grad_check {
        let report = problem.grad_check(masksplitter::gradcheck::DEFAULT_STEP)?;
        println!(
            "max relative gradient error: {:e} over {} parameters",
            report.max_relative_error, report.checked
        );
        // NaN counts as a failure
        if report.max_relative_error.is_nan() || report.max_relative_error >= GRAD_CHECK_TOLERANCE {
            grad_failure = Some(report.max_relative_error);
        }
    }

    let curve = problem.train(a.iters, AdamConfig::with_learning_rate(a.lr))?;
    if let Some(path) = &a.out {
        let mut wr =
            csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        wr.write_record(["step", "l_gs", "l_good", "l_badcows", "l_badpreds", "total"])?;
        for (step, l) in curve.iter().enumerate() {
            wr.write_record([
                step.to_string(),
                l.l_gs.to_string(),
                l.l_good.to_string(),
                l.l_badcows.to_string(),
                l.l_badpreds.to_string(),
                l.total.to_string(),
            ])?;
        }
        wr.flush()?;
    }
    let (first, last) = (curve[0].total, curve[curve.len() - 1].total);
    println!("total loss {first} -> {last} after {} steps", a.iters);

    if let Some(err) = grad_failure {
        bail!("gradient check failed: {err:e} >= {GRAD_CHECK_TOLERANCE:e}");
    }
    Ok(())
}

fn isodata(a: IsodataArgs) -> Result<()> {
    let img = io::read_gray(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    println!("{}", isodata_threshold(&img)?);
    Ok(())
}

fn crop(a: CropArgs) -> Result<()> {
    let frame =
        io::read_gray(&a.frame).with_context(|| format!("reading {}", a.frame.display()))?;
    let labels =
        io::read_labels(&a.labels).with_context(|| format!("reading {}", a.labels.display()))?;
    let spec = CropSpec { size: a.size };
    create_dir(&a.out)?;
    for id in 1..=labels.count() {
        let c = crop_around_instance(&frame, &labels, id, spec)?;
        io::write_gray(a.out.join(format!("crop_{id:05}.pgm")), &c.image)?;
        io::write_labels(a.out.join(format!("crop_{id:05}_labels.pgm")), &c.labels)?;
    }
    println!("{} crops written to {}", labels.count(), a.out.display());
    Ok(())
}

/// 8-bit rendering of object-minus-background evidence.
fn render_frame(scores: &ScoreMapPair) -> GrayImage {
    let (w, h) = scores.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let d = scores.object().get(x, y) - scores.background().get(x, y);
        (127.5 + 50.0 * d).round().clamp(0.0, 255.0) as u8
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let (h, w) = a.size;
    let cfg = SynthConfig {
        noise: a.noise,
        ..SynthConfig::new(w, h, a.n, a.occlusion, a.seed)
    };
    let scene = synth_scene_with(&cfg)?;
    create_dir(&a.out)?;
    io::write_scores(a.out.join("scores.json"), &scene.scores)?;
    io::write_labels(a.out.join("labels.pgm"), &scene.labels)?;
    io::write_mask(a.out.join("pred.pgm"), &binarize_scores(&scene.scores))?;
    io::write_gray(a.out.join("frame.pgm"), &render_frame(&scene.scores))?;
    println!(
        "{} instances written to {}",
        scene.labels.count(),
        a.out.display()
    );
    Ok(())
}
