//! Online tracking loop.
//!
//! Each [`Tracker::step`] runs the association cascade for one frame:
//!
//! 1. trajectories seen on the previous step are matched to the frame's
//!    detections with the configured mix of overlap and identity scores;
//! 2. the paused trajectories in the buffer are tried level by level, most
//!    recent first, against the detections still unassigned, by identity
//!    only;
//! 3. every remaining detection starts a new trajectory;
//! 4. trajectories left unmatched take the external prediction when one is
//!    supplied, otherwise they are moved by their average velocity, and
//!    are paused into the buffer.
//!
//! A trajectory can be recovered while it is at most `buffer_size` steps
//! old; after that its id is retired.

use std::collections::VecDeque;

use crate::affinity::{combined_affinity, nms, AffinityWeights, DEFAULT_NMS_IOU};
use crate::assignment::{solve_max, DEFAULT_MIN_AFFINITY};
use crate::error::{Error, Result};
use crate::geometry::{normalize_in_place, BBox, Detection};

/// A tracked object: identity plus the head state used for association.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: u64,
    head_box: BBox,
    head_embedding: Vec<f64>,
    avg_velocity: (f64, f64),
    last_seen: u32,
    age: u32,
    paused_for: u32,
    // Last observed box; anchor for the displacement estimate.
    last_box: BBox,
    last_confidence: f64,
    // Index of the detection matched at `last_seen` within its frame.
    source_det: Option<usize>,
}

impl Trajectory {
    /// Starts a trajectory at `frame`. `embedding` may be empty when the
    /// tracker runs on overlap alone.
    pub fn new(id: u64, head_box: BBox, embedding: Vec<f64>, frame: u32) -> Self {
        Self {
            id,
            head_box,
            head_embedding: embedding,
            avg_velocity: (0.0, 0.0),
            last_seen: frame,
            age: 1,
            paused_for: 0,
            last_box: head_box,
            last_confidence: 1.0,
            source_det: None,
        }
    }

    fn from_detection(id: u64, det: &Detection, det_index: usize) -> Self {
        let embedding = det
            .embedding
            .clone()
            .map(|mut e| {
                normalize_in_place(&mut e);
                e
            })
            .unwrap_or_default();
        let mut t = Self::new(id, det.bbox, embedding, det.frame);
        t.last_confidence = det.confidence;
        t.source_det = Some(det_index);
        t
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn head_box(&self) -> &BBox {
        &self.head_box
    }

    pub fn head_embedding(&self) -> &[f64] {
        &self.head_embedding
    }

    pub fn avg_velocity(&self) -> (f64, f64) {
        self.avg_velocity
    }

    pub fn last_seen(&self) -> u32 {
        self.last_seen
    }

    pub fn age(&self) -> u32 {
        self.age
    }

    pub fn paused_for(&self) -> u32 {
        self.paused_for
    }

    pub fn source_det(&self) -> Option<usize> {
        self.source_det
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.avg_velocity = (vx, vy);
        self
    }
}

/// Head box moved by one step of the trajectory's average velocity.
pub fn propagate_linear(traj: &Trajectory) -> BBox {
    let (vx, vy) = traj.avg_velocity;
    traj.head_box.translated(vx, vy)
}

/// Folds a matched detection into a trajectory.
///
/// The head box becomes the detection box. The head embedding and the
/// velocity are exponential averages weighted by `momentum` on the old
/// value; the embedding is re-normalized. A detection without an embedding
/// leaves the head embedding untouched.
pub fn update_trajectory(traj: &Trajectory, det: &Detection, momentum: f64) -> Trajectory {
    update_with_gap(traj, det, momentum, 1)
}

fn update_with_gap(
    traj: &Trajectory,
    det: &Detection,
    momentum: f64,
    frame_gap: u32,
) -> Trajectory {
    let mut t = traj.clone();
    if let Some(new) = &det.embedding {
        if t.head_embedding.len() == new.len() {
            let mut mixed: Vec<f64> = t
                .head_embedding
                .iter()
                .zip(new)
                .map(|(o, n)| momentum * o + (1.0 - momentum) * n)
                .collect();
            normalize_in_place(&mut mixed);
            t.head_embedding = mixed;
        } else {
            let mut e = new.clone();
            normalize_in_place(&mut e);
            t.head_embedding = e;
        }
    }
    let steps = steps_between(traj.last_seen, det.frame, frame_gap).max(1) as f64;
    let dx = (det.bbox.cx() - traj.last_box.cx()) / steps;
    let dy = (det.bbox.cy() - traj.last_box.cy()) / steps;
    t.avg_velocity = (
        momentum * traj.avg_velocity.0 + (1.0 - momentum) * dx,
        momentum * traj.avg_velocity.1 + (1.0 - momentum) * dy,
    );
    t.head_box = det.bbox;
    t.last_box = det.bbox;
    t.last_seen = det.frame;
    t.last_confidence = det.confidence;
    t.paused_for = 0;
    t
}

fn steps_between(from: u32, to: u32, frame_gap: u32) -> u32 {
    let gap = frame_gap.max(1);
    to.saturating_sub(from).div_ceil(gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub weights: AffinityWeights,
    /// Number of association levels, counting the previous step as level 1.
    pub buffer_size: usize,
    pub min_affinity: f64,
    pub det_threshold: f64,
    pub nms_iou: f64,
    pub motion_propagate_frames: u32,
    pub embedding_momentum: f64,
    /// Frame-number distance of one tracker step.
    pub frame_gap: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            weights: AffinityWeights::default(),
            buffer_size: 10,
            min_affinity: DEFAULT_MIN_AFFINITY,
            det_threshold: 0.0,
            nms_iou: DEFAULT_NMS_IOU,
            motion_propagate_frames: 5,
            embedding_momentum: 0.5,
            frame_gap: 1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.buffer_size < 1 {
            return bad("buffer_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.det_threshold) {
            return bad("det_threshold must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad("nms_iou must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.embedding_momentum) {
            return bad("embedding_momentum must be in [0, 1]");
        }
        if self.frame_gap < 1 {
            return bad("frame_gap must be at least 1");
        }
        if !self.min_affinity.is_finite() {
            return bad("min_affinity must be finite");
        }
        Ok(())
    }

    /// Weights used against buffered trajectories.
    ///
    /// Buffered heads are matched by identity alone. A configuration with
    /// no identity term has nothing to compare, so it keeps matching on
    /// overlap against the propagated heads.
    pub fn buffer_weights(&self) -> AffinityWeights {
        if self.weights.w2() > 0.0 {
            AffinityWeights::id_only()
        } else {
            AffinityWeights::iou_only()
        }
    }

    /// Confidence filter followed by NMS.
    pub fn prepare_detections(&self, dets: &[Detection]) -> Vec<Detection> {
        let kept: Vec<Detection> = dets
            .iter()
            .filter(|d| d.confidence >= self.det_threshold)
            .cloned()
            .collect();
        nms(&kept, self.nms_iou)
    }
}

/// One emitted box.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
    /// Set for boxes produced by propagation rather than a detection.
    pub interpolated: bool,
}

/// Tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    active: Vec<Trajectory>,
    // buffer[k] holds the trajectories paused k + 1 steps ago, i.e.
    // association level k + 2.
    buffer: VecDeque<Vec<Trajectory>>,
    next_id: u64,
    current_frame: Option<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            active: Vec::new(),
            buffer: VecDeque::new(),
            next_id: 1,
            current_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Trajectories matched on the last step, sorted by id. Predictions
    /// passed to [`Tracker::step`] align with this slice.
    pub fn active(&self) -> &[Trajectory] {
        &self.active
    }

    /// Paused trajectories, most recent level first.
    pub fn buffered(&self) -> impl Iterator<Item = &Trajectory> {
        self.buffer.iter().flatten()
    }

    pub fn buffer_depth(&self) -> usize {
        self.buffer.len()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn current_frame(&self) -> Option<u32> {
        self.current_frame
    }

    /// Processes the detections of `frame`.
    ///
    /// `dets` should already be filtered (see
    /// [`TrackerConfig::prepare_detections`]). `predictions`, when given,
    /// has one entry per trajectory in [`Tracker::active`].
    pub fn step(
        &mut self,
        frame: u32,
        dets: &[Detection],
        predictions: Option<&[Option<BBox>]>,
    ) -> Result<Vec<TrackOutput>> {
        let steps = match self.current_frame {
            Some(current) if frame <= current => {
                return Err(Error::FrameRegression {
                    current,
                    got: frame,
                })
            }
            Some(current) => steps_between(current, frame, self.config.frame_gap),
            None => 1,
        };
        if let Some(p) = predictions {
            if p.len() != self.active.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} predictions for {} active trajectories",
                    p.len(),
                    self.active.len()
                )));
            }
        }
        if let Some(i) = dets.iter().position(|d| d.frame != frame) {
            return Err(Error::InvalidParameter(format!(
                "detection {i} belongs to frame {} not {frame}",
                dets[i].frame
            )));
        }
        if self.config.weights.w2() > 0.0 {
            if let Some(index) = dets.iter().position(|d| d.embedding.is_none()) {
                return Err(Error::MissingEmbedding {
                    index,
                    w2: self.config.weights.w2(),
                });
            }
        }

        let mut predicted = vec![false; self.active.len()];
        if let Some(preds) = predictions {
            for ((t, p), flag) in self.active.iter_mut().zip(preds).zip(&mut predicted) {
                if let Some(b) = p {
                    t.head_box = *b;
                    *flag = true;
                }
            }
        }

        // Steps with no frame supplied in between age everything first.
        for _ in 1..steps {
            let idle = std::mem::take(&mut self.active);
            let flags = std::mem::take(&mut predicted);
            self.pause(idle, &flags);
        }
        self.current_frame = Some(frame);
        let momentum = self.config.embedding_momentum;
        let gap = self.config.frame_gap;

        let mut det_free = vec![true; dets.len()];
        let mut next_active: Vec<Trajectory> = Vec::new();

        // Level 1.
        let level1 = std::mem::take(&mut self.active);
        let mut level1_matched = vec![false; level1.len()];
        if !level1.is_empty() && !dets.is_empty() {
            let rows: Vec<&Trajectory> = level1.iter().collect();
            let cols: Vec<&Detection> = dets.iter().collect();
            let m = combined_affinity(&rows, &cols, self.config.weights)?;
            for (r, c) in solve_max(&m, self.config.min_affinity).pairs {
                let mut t = update_with_gap(&level1[r], &dets[c], momentum, gap);
                t.source_det = Some(c);
                next_active.push(t);
                level1_matched[r] = true;
                det_free[c] = false;
            }
        }

        // Buffer levels, most recent first.
        let buffer_weights = self.config.buffer_weights();
        for level in self.buffer.iter_mut() {
            let free: Vec<usize> = (0..dets.len()).filter(|&j| det_free[j]).collect();
            if free.is_empty() {
                break;
            }
            if level.is_empty() {
                continue;
            }
            let rows: Vec<&Trajectory> = level.iter().collect();
            let cols: Vec<&Detection> = free.iter().map(|&j| &dets[j]).collect();
            let m = combined_affinity(&rows, &cols, buffer_weights)?;
            let assignment = solve_max(&m, self.config.min_affinity);
            let mut taken = vec![false; level.len()];
            for &(r, c) in &assignment.pairs {
                let d = free[c];
                let mut t = update_with_gap(&level[r], &dets[d], momentum, gap);
                t.source_det = Some(d);
                next_active.push(t);
                taken[r] = true;
                det_free[d] = false;
            }
            let mut idx = 0;
            level.retain(|_| {
                let keep = !taken[idx];
                idx += 1;
                keep
            });
        }

        // New trajectories.
        for (j, d) in dets.iter().enumerate().filter(|(j, _)| det_free[*j]) {
            next_active.push(Trajectory::from_detection(self.next_id, d, j));
            self.next_id += 1;
        }

        // Unmatched level-1 trajectories are paused; deeper levels age.
        let (unmatched, flags): (Vec<Trajectory>, Vec<bool>) = level1
            .into_iter()
            .zip(level1_matched)
            .zip(predicted)
            .filter(|((_, matched), _)| !matched)
            .map(|((t, _), p)| (t, p))
            .unzip();
        self.pause(unmatched, &flags);

        for t in next_active.iter_mut() {
            t.age += 1;
        }
        next_active.sort_by_key(|t| t.id);
        self.active = next_active;

        let mut out: Vec<TrackOutput> = self
            .active
            .iter()
            .map(|t| TrackOutput {
                frame,
                id: t.id,
                bbox: t.head_box,
                confidence: t.last_confidence,
                interpolated: false,
            })
            .collect();
        out.extend(
            self.buffered()
                .filter(|t| t.paused_for <= self.config.motion_propagate_frames)
                .map(|t| TrackOutput {
                    frame,
                    id: t.id,
                    bbox: t.head_box,
                    confidence: t.last_confidence,
                    interpolated: true,
                }),
        );
        out.sort_by_key(|o| o.id);
        Ok(out)
    }

    // Moves `paused` (just unmatched at level 1) into the buffer and ages
    // every buffered trajectory by one step.
    fn pause(&mut self, paused: Vec<Trajectory>, predicted: &[bool]) {
        let horizon = self.config.motion_propagate_frames;
        for level in self.buffer.iter_mut() {
            for t in level.iter_mut() {
                t.paused_for += 1;
                t.age += 1;
                if t.paused_for <= horizon {
                    t.head_box = propagate_linear(t);
                }
            }
        }
        let fresh: Vec<Trajectory> = paused
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.paused_for = 1;
                t.age += 1;
                t.source_det = None;
                let has_prediction = predicted.get(i).copied().unwrap_or(false);
                if !has_prediction && horizon >= 1 {
                    t.head_box = propagate_linear(&t);
                }
                t
            })
            .collect();
        self.buffer.push_front(fresh);
        while self.buffer.len() > self.config.buffer_size - 1 {
            self.buffer.pop_back();
        }
    }
}

/// Runs a tracker over a whole sequence of per-frame detections.
///
/// `frames` must be sorted by frame number. Detections are passed through
/// [`TrackerConfig::prepare_detections`] first.
pub fn track_sequence(
    config: &TrackerConfig,
    frames: &[(u32, Vec<Detection>)],
) -> Result<Vec<TrackOutput>> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::new();
    for (frame, dets) in frames {
        let prepared = config.prepare_detections(dets);
        out.extend(tracker.step(*frame, &prepared, None)?);
    }
    Ok(out)
}
