//! End-to-end glue: sequence runs, simulator hand-off and the frame-rate
//! ablation.

use std::collections::BTreeMap;

use crate::affinity::{nms_indices, AffinityWeights};
use crate::error::Result;
use crate::geometry::{BBox, Detection};
use crate::io::PredictionTable;
use crate::metrics::{evaluate, sweep_from_reports, FrameBoxes, ScoredBox, ScoredFrames, Sweep};
use crate::sim::{generate, synthetic_predictions, SimConfig, SimOutput};
use crate::tracker::{TrackOutput, Tracker, TrackerConfig};

/// Detections of one sequence, ready for tracking.
#[derive(Debug, Clone, Default)]
pub struct SequenceInput {
    /// `(frame, detections)` sorted by frame; frames may be missing.
    pub frames: Vec<(u32, Vec<Detection>)>,
    /// Next-frame boxes keyed by the source detection's `(frame, index)`.
    pub predictions: Option<PredictionTable>,
}

impl SequenceInput {
    pub fn from_sim(out: &SimOutput, config: &SimConfig, with_predictions: bool) -> Self {
        let frames = out
            .frames
            .iter()
            .map(|f| {
                (
                    f.frame,
                    f.dets.iter().map(|d| d.detection.clone()).collect(),
                )
            })
            .collect();
        let predictions = with_predictions.then(|| {
            let mut table = PredictionTable::new();
            for (frame, preds) in out.frames.iter().zip(synthetic_predictions(out, config)) {
                for (k, b) in preds.into_iter().enumerate() {
                    table.insert((frame.frame, k), b);
                }
            }
            table
        });
        Self {
            frames,
            predictions,
        }
    }
}

/// Ground truth of a simulated sequence.
pub fn sim_ground_truth(out: &SimOutput) -> FrameBoxes {
    out.frames.iter().map(|f| (f.frame, f.gt.clone())).collect()
}

/// Indices of the detections kept by the confidence filter and NMS.
pub fn prepare_indices(config: &TrackerConfig, dets: &[Detection]) -> Vec<usize> {
    let passing: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].confidence >= config.det_threshold)
        .collect();
    let subset: Vec<Detection> = passing.iter().map(|&i| dets[i].clone()).collect();
    nms_indices(&subset, config.nms_iou)
        .into_iter()
        .map(|k| passing[k])
        .collect()
}

/// Tracks a whole sequence, stepping through every frame number from 1 to
/// the last frame that has detections.
pub fn run_tracker(config: &TrackerConfig, input: &SequenceInput) -> Result<Vec<TrackOutput>> {
    let mut tracker = Tracker::new(config.clone())?;
    let by_frame: BTreeMap<u32, &Vec<Detection>> =
        input.frames.iter().map(|(f, d)| (*f, d)).collect();
    let last = by_frame.keys().next_back().copied().unwrap_or(0);
    let empty = Vec::new();
    let mut out = Vec::new();
    // Original indices of the detections passed on the previous step.
    let mut prev: Option<(u32, Vec<usize>)> = None;

    for frame in 1..=last {
        let all = by_frame.get(&frame).copied().unwrap_or(&empty);
        let kept = prepare_indices(config, all);
        let dets: Vec<Detection> = kept.iter().map(|&i| all[i].clone()).collect();

        let preds: Option<Vec<Option<BBox>>> = input.predictions.as_ref().map(|table| {
            tracker
                .active()
                .iter()
                .map(|t| {
                    let (pf, idx) = prev.as_ref()?;
                    let orig = *idx.get(t.source_det()?)?;
                    table.get(&(*pf, orig)).copied()
                })
                .collect()
        });
        out.extend(tracker.step(frame, &dets, preds.as_deref())?);
        prev = Some((frame, kept));
    }
    Ok(out)
}

/// Tracker output as scored per-frame hypotheses.
pub fn outputs_to_frames(outputs: &[TrackOutput], include_interpolated: bool) -> ScoredFrames {
    let mut m = ScoredFrames::new();
    for o in outputs
        .iter()
        .filter(|o| include_interpolated || !o.interpolated)
    {
        m.entry(o.frame).or_default().push(ScoredBox {
            id: o.id,
            bbox: o.bbox,
            confidence: o.confidence,
        });
    }
    m
}

pub fn strip_scores(frames: &ScoredFrames) -> FrameBoxes {
    frames
        .iter()
        .map(|(f, v)| (*f, v.iter().map(|b| (b.id, b.bbox)).collect()))
        .collect()
}

/// The three association setups compared in the frame-rate ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Model {
    /// Detections, overlap association.
    IouAssoc,
    /// Detections plus next-frame predictions, overlap association.
    PredIouAssoc,
    /// Predictions plus identity embeddings, combined association.
    IdAssoc,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::IouAssoc, Model::PredIouAssoc, Model::IdAssoc];

    pub fn label(&self) -> &'static str {
        match self {
            Model::IouAssoc => "Det + IoU Asso.",
            Model::PredIouAssoc => "Det + Pred + IoU Asso.",
            Model::IdAssoc => "Det + Pred + Iden + ID Asso.",
        }
    }

    pub fn uses_predictions(&self) -> bool {
        !matches!(self, Model::IouAssoc)
    }

    /// `base` with this model's association weights.
    pub fn config(&self, base: &TrackerConfig) -> TrackerConfig {
        let weights = match self {
            Model::IouAssoc | Model::PredIouAssoc => AffinityWeights::iou_only(),
            Model::IdAssoc => base.weights,
        };
        TrackerConfig {
            weights,
            ..base.clone()
        }
    }
}

/// Runs `config` over a simulated scene at every detection threshold and
/// evaluates each run.
pub fn threshold_sweep(
    config: &TrackerConfig,
    scene: &SimOutput,
    sim: &SimConfig,
    with_predictions: bool,
    thresholds: &[f64],
    iou_gate: f64,
) -> Result<Sweep> {
    let gt = sim_ground_truth(scene);
    let input = SequenceInput::from_sim(scene, sim, with_predictions);
    let rows = thresholds
        .iter()
        .map(|&t| {
            let cfg = TrackerConfig {
                det_threshold: t,
                ..config.clone()
            };
            let hyp = strip_scores(&outputs_to_frames(&run_tracker(&cfg, &input)?, false));
            Ok((t, evaluate(&gt, &hyp, iou_gate)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep_from_reports(rows))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub model: Model,
    pub stride: u32,
    pub sweep: Sweep,
}

/// Every model at every stride on the scene described by `sim`. Rows are
/// ordered by stride, then model.
pub fn ablate(
    sim: &SimConfig,
    base: &TrackerConfig,
    strides: &[u32],
    thresholds: &[f64],
    iou_gate: f64,
) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(u32, Model)> = strides
        .iter()
        .flat_map(|&s| Model::ALL.iter().map(move |&m| (s, m)))
        .collect();
    let scenes = strides
        .iter()
        .map(|&s| {
            let cfg = SimConfig {
                frame_stride: s,
                ..sim.clone()
            };
            Ok((s, generate(&cfg)?, cfg))
        })
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<Result<AblationRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(stride, model)| {
                let (_, scene, cfg) = scenes
                    .iter()
                    .find(|(s, _, _)| *s == stride)
                    .expect("scene per stride");
                scope.spawn(move || {
                    let sweep = threshold_sweep(
                        &model.config(base),
                        scene,
                        cfg,
                        model.uses_predictions(),
                        thresholds,
                        iou_gate,
                    )?;
                    Ok(AblationRow {
                        model,
                        stride,
                        sweep,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.stride, r.model));
    Ok(rows)
}

/// Table of per-metric sweep optima, one row per model and stride.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let table: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|r| {
            let mut cells = r.sweep.best.table_cells().to_vec();
            cells.push(r.stride.to_string());
            (r.model.label().to_string(), cells)
        })
        .collect();
    crate::metrics::render_table("Model", &table, &["stride"])
}
