//! Command-line interface: `track`, `eval`, `simulate` and `ablate`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::affinity::AffinityWeights;
use crate::io::{self, EmbeddingTable, KeyValues, PredictionTable};
use crate::metrics::{
    self, evaluate, render_table, sweep_thresholds, MotReport, Sweep, DEFAULT_IOU_GATE,
};
use crate::pipeline::{self, SequenceInput};
use crate::sim::{self, SimConfig};
use crate::tracker::TrackerConfig;

/// Environment variable overriding the simulation seed.
pub const SEED_ENV: &str = "IDTRACK_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "idtrack",
    version,
    about = "Online multi-object tracking with identity embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Link per-frame detections into trajectories.
    Track(TrackArgs),
    /// Score a result file against ground truth with CLEAR-MOT metrics.
    Eval(EvalArgs),
    /// Write a synthetic scene (ground truth, detections, embeddings, predictions).
    Simulate(SimulateArgs),
    /// Compare the association models across frame strides on a synthetic scene.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Detections in MOT format.
    #[arg(long)]
    dets: PathBuf,
    /// Embedding sidecar keyed by (frame, detection index).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Next-frame box predictions keyed by (frame, detection index).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// key=value tracker configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named weight preset: `default` (0.5/0.5) or `mot16` (0.2/0.8).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    buffer_size: Option<usize>,
    #[arg(long)]
    min_affinity: Option<f64>,
    #[arg(long)]
    det_threshold: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Steps an unmatched trajectory is moved by its velocity.
    #[arg(long)]
    propagate_frames: Option<u32>,
    /// Keep every k-th frame; output frames are renumbered 1, 2, ...
    #[arg(long, default_value_t = 1)]
    frame_stride: u32,
    /// Also write boxes of propagated (unmatched) trajectories.
    #[arg(long)]
    emit_propagated: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
    iou_gate: f64,
    /// Sweep hypothesis confidence thresholds 0.1..0.9.
    #[arg(long)]
    sweep: bool,
    /// Comma-separated thresholds for --sweep.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Keep every k-th ground-truth frame, renumbered, to match a strided run.
    #[arg(long, default_value_t = 1)]
    frame_stride: u32,
    /// Write the key=value report here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// key=value scene configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the benchmark scene instead of the default one.
    #[arg(long)]
    benchmark: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the default scene instead of the benchmark one.
    #[arg(long)]
    small: bool,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 10])]
    strides: Vec<u32>,
    #[arg(long, default_value_t = 0.5)]
    w1: f64,
    #[arg(long, default_value_t = 0.5)]
    w2: f64,
    #[arg(long, default_value_t = 10)]
    buffer_size: usize,
    #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
    iou_gate: f64,
    /// Write the table here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn weights_from(
    w1: Option<f64>,
    w2: Option<f64>,
    current: AffinityWeights,
) -> anyhow::Result<AffinityWeights> {
    let (w1, w2) = match (w1, w2) {
        (None, None) => return Ok(current),
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, 1.0 - a),
        (None, Some(b)) => (1.0 - b, b),
    };
    Ok(AffinityWeights::new(w1, w2)?)
}

/// Tracker settings from a key=value file.
pub fn tracker_config_from(kv: &KeyValues) -> anyhow::Result<TrackerConfig> {
    let mut c = TrackerConfig::default();
    if let Some(p) = kv.get("preset") {
        c.weights = AffinityWeights::preset(p).with_context(|| format!("unknown preset `{p}`"))?;
    }
    let w1 = kv.get("w1").map(|_| kv.get_f64("w1")).transpose()?;
    let w2 = kv.get("w2").map(|_| kv.get_f64("w2")).transpose()?;
    c.weights = weights_from(w1, w2, c.weights)?;
    for (key, _) in kv.iter() {
        match key {
            "preset" | "w1" | "w2" => {}
            "buffer_size" => c.buffer_size = kv.get_u64(key)? as usize,
            "min_affinity" => c.min_affinity = kv.get_f64(key)?,
            "det_threshold" => c.det_threshold = kv.get_f64(key)?,
            "nms_iou" => c.nms_iou = kv.get_f64(key)?,
            "momentum" => c.embedding_momentum = kv.get_f64(key)?,
            "propagate_frames" => c.motion_propagate_frames = kv.get_u64(key)? as u32,
            "frame_gap" => c.frame_gap = kv.get_u64(key)? as u32,
            other => bail!("unknown tracker key `{other}`"),
        }
    }
    Ok(c)
}

fn track(a: TrackArgs) -> anyhow::Result<()> {
    let mut config = match &a.config {
        Some(p) => tracker_config_from(&KeyValues::read(p)?)?,
        None => TrackerConfig::default(),
    };
    if let Some(p) = &a.preset {
        config.weights =
            AffinityWeights::preset(p).with_context(|| format!("unknown preset `{p}`"))?;
    }
    config.weights = weights_from(a.w1, a.w2, config.weights)?;
    if let Some(v) = a.buffer_size {
        config.buffer_size = v;
    }
    if let Some(v) = a.min_affinity {
        config.min_affinity = v;
    }
    if let Some(v) = a.det_threshold {
        config.det_threshold = v;
    }
    if let Some(v) = a.nms_iou {
        config.nms_iou = v;
    }
    if let Some(v) = a.momentum {
        config.embedding_momentum = v;
    }
    if let Some(v) = a.propagate_frames {
        config.motion_propagate_frames = v;
    }
    config.validate()?;
    if a.frame_stride < 1 {
        bail!("--frame-stride must be at least 1");
    }

    let mut frames = io::read_detections(&a.dets)?;
    if let Some(p) = &a.embeddings {
        let table = io::read_embeddings(p)?;
        io::attach_embeddings(&mut frames, &table)?;
    } else if config.weights.w2() > 0.0 {
        bail!("--embeddings is required when w2 > 0");
    }
    let predictions = a
        .predictions
        .as_deref()
        .map(io::read_predictions)
        .transpose()?;

    let (frames, predictions) = apply_stride(frames, predictions, a.frame_stride);
    let outputs = pipeline::run_tracker(
        &config,
        &SequenceInput {
            frames,
            predictions,
        },
    )?;
    io::write_results(&a.out, &outputs, a.emit_propagated)?;
    Ok(())
}

// Keeps frames 1, 1+k, ... renumbered densely. Prediction keys follow the
// renumbering of their source frame.
fn apply_stride(
    frames: Vec<(u32, Vec<crate::geometry::Detection>)>,
    predictions: Option<PredictionTable>,
    stride: u32,
) -> (
    Vec<(u32, Vec<crate::geometry::Detection>)>,
    Option<PredictionTable>,
) {
    if stride == 1 {
        return (frames, predictions);
    }
    let kept = |f: u32| (f - 1).is_multiple_of(stride);
    let renumber = |f: u32| (f - 1) / stride + 1;
    let frames = frames
        .into_iter()
        .filter(|(f, _)| kept(*f))
        .map(|(f, mut dets)| {
            let nf = renumber(f);
            dets.iter_mut().for_each(|d| d.frame = nf);
            (nf, dets)
        })
        .collect();
    let predictions = predictions.map(|t| {
        t.into_iter()
            .filter(|((f, _), _)| kept(*f))
            .map(|((f, i), b)| ((renumber(f), i), b))
            .collect()
    });
    (frames, predictions)
}

fn stride_gt(gt: metrics::FrameBoxes, stride: u32) -> metrics::FrameBoxes {
    gt.into_iter()
        .filter(|(f, _)| (f - 1) % stride == 0)
        .map(|(f, v)| ((f - 1) / stride + 1, v))
        .collect()
}

fn sweep_table(sweep: &Sweep) -> String {
    let mut rows: Vec<(String, Vec<String>)> = sweep
        .rows
        .iter()
        .map(|(t, r)| (format!("{t:.2}"), r.table_cells().to_vec()))
        .collect();
    rows.push(("max".into(), sweep.best.table_cells().to_vec()));
    let (t, r) = sweep.best_mota();
    rows.push((format!("best@{t:.2}"), r.table_cells().to_vec()));
    render_table("threshold", &rows, &[])
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    if a.frame_stride < 1 {
        bail!("--frame-stride must be at least 1");
    }
    let gt = stride_gt(io::read_tracks(&a.gt)?, a.frame_stride);
    let mut text = String::new();
    let report: MotReport = if a.sweep || a.thresholds.is_some() {
        let thresholds = a
            .thresholds
            .clone()
            .unwrap_or_else(metrics::default_thresholds);
        let hyp = io::read_scored_tracks(&a.hyp)?;
        let sweep = sweep_thresholds(&gt, &hyp, &thresholds, a.iou_gate)?;
        text.push_str(&sweep_table(&sweep));
        let (t, r) = sweep.best_mota().clone();
        let _ = writeln!(text, "best_threshold={t}");
        r
    } else {
        let hyp = io::read_tracks(&a.hyp)?;
        let r = evaluate(&gt, &hyp, a.iou_gate)?;
        text.push_str(&render_table(
            "",
            &[(String::new(), r.table_cells().to_vec())],
            &[],
        ));
        r
    };
    let kv = report.to_key_value();
    text.push_str(&kv);
    print!("{text}");
    if let Some(p) = &a.report {
        fs::write(p, &kv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn seed_override(flag: Option<u64>) -> anyhow::Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            Ok(Some(v.trim().parse().with_context(|| {
                format!("{SEED_ENV}=`{v}` is not an integer")
            })?))
        }
        Err(_) => Ok(None),
    }
}

fn sim_config(
    path: Option<&Path>,
    benchmark: bool,
    seed: Option<u64>,
) -> anyhow::Result<SimConfig> {
    let mut c = if benchmark {
        SimConfig::benchmark()
    } else {
        SimConfig::default()
    };
    if let Some(p) = path {
        c.apply(&KeyValues::read(p)?)?;
    }
    if let Some(s) = seed_override(seed)? {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let config = sim_config(a.config.as_deref(), a.benchmark, a.seed)?;
    let out = sim::generate(&config)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let gt: Vec<_> = out.frames.iter().map(|f| (f.frame, f.gt.clone())).collect();
    io::write_ground_truth(&a.out_dir.join("gt.txt"), &gt)?;
    let input = SequenceInput::from_sim(&out, &config, true);
    io::write_detections(&a.out_dir.join("det.txt"), &input.frames)?;
    let mut emb = EmbeddingTable {
        dim: out.embedding_dim,
        ..Default::default()
    };
    for (f, dets) in &input.frames {
        for (i, d) in dets.iter().enumerate() {
            if let Some(v) = &d.embedding {
                emb.vectors.insert((*f, i), v.clone());
            }
        }
    }
    io::write_embeddings(&a.out_dir.join("emb.txt"), &emb)?;
    io::write_predictions(
        &a.out_dir.join("pred.txt"),
        input.predictions.as_ref().expect("requested"),
    )?;
    fs::write(a.out_dir.join("sim.cfg"), config.to_key_values())?;
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let sim = sim_config(a.config.as_deref(), !a.small, a.seed)?;
    let base = TrackerConfig {
        weights: AffinityWeights::new(a.w1, a.w2)?,
        buffer_size: a.buffer_size,
        ..TrackerConfig::default()
    };
    base.validate()?;
    if a.strides.iter().any(|s| *s < 1) {
        bail!("strides must be at least 1");
    }
    let rows = pipeline::ablate(
        &sim,
        &base,
        &a.strides,
        &metrics::default_thresholds(),
        a.iou_gate,
    )?;
    let table = pipeline::render_ablation(&rows);
    print!("{table}");
    if let Some(p) = &a.out {
        fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["idtrack", "track", "--bogus"]), 2);
        assert_eq!(run(["idtrack", "track", "--dets", "x"]), 2);
        assert_eq!(run(["idtrack"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        assert_eq!(
            run([
                "idtrack",
                "eval",
                "--gt",
                "/nonexistent/gt",
                "--hyp",
                "/nonexistent/h"
            ]),
            1
        );
    }

    #[test]
    fn weight_resolution() {
        let d = AffinityWeights::default();
        assert_eq!(weights_from(None, None, d).unwrap(), d);
        assert_eq!(
            weights_from(Some(0.2), Some(0.8), d).unwrap(),
            AffinityWeights::mot16()
        );
        assert_eq!(
            weights_from(Some(1.0), None, d).unwrap(),
            AffinityWeights::iou_only()
        );
        assert!(weights_from(Some(0.3), Some(0.3), d).is_err());
    }

    #[test]
    fn tracker_config_file() {
        let kv = KeyValues::parse("preset=mot16\nbuffer_size=4\nmin_affinity=0.3").unwrap();
        let c = tracker_config_from(&kv).unwrap();
        assert_eq!(c.weights, AffinityWeights::mot16());
        assert_eq!((c.buffer_size, c.min_affinity), (4, 0.3));
        assert!(tracker_config_from(&KeyValues::parse("nope=1").unwrap()).is_err());
    }

    #[test]
    fn stride_renumbers_frames_and_predictions() {
        use crate::geometry::{BBox, Detection};
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let frames: Vec<_> = (1..=5)
            .map(|f| (f, vec![Detection::new(f, b, 1.0)]))
            .collect();
        let preds = PredictionTable::from([((3, 0), b), ((2, 0), b)]);
        let (f, p) = apply_stride(frames, Some(preds), 2);
        assert_eq!(f.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(f.iter().all(|(n, d)| d[0].frame == *n));
        assert_eq!(p.unwrap().keys().copied().collect::<Vec<_>>(), vec![(2, 0)]);
    }
}
