//! Deterministic synthetic scenes for tracker experiments.
//!
//! Objects move piecewise-linearly inside a rectangular arena, bouncing off
//! its walls, with occasional random velocity kicks. Each identity owns a
//! prototype embedding drawn uniformly from the unit sphere; its detections
//! carry noisy copies of it. Detections are perturbed truth boxes, dropped
//! at random and during scripted occlusions, plus uniformly placed clutter.
//!
//! All randomness comes from ChaCha8 streams keyed by `(seed, purpose,
//! frame, object)`, so the observation of a given object on a given frame
//! does not depend on which other frames are emitted. That makes
//! `subsample(generate(c), k)` identical to generating with
//! `frame_stride = k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{normalize_in_place, BBox, Detection};
use crate::io::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub num_identities: usize,
    /// Frames of the full-rate world.
    pub frames: u32,
    pub arena: (f64, f64),
    /// Speed range in pixels per full-rate frame.
    pub speed_range: (f64, f64),
    pub box_size_range: (f64, f64),
    /// Probability per frame that an object's velocity is re-drawn.
    pub kick_prob: f64,
    pub center_noise: f64,
    /// Relative standard deviation of width/height noise.
    pub size_noise: f64,
    pub miss_rate: f64,
    /// Expected clutter detections per frame.
    pub fp_rate: f64,
    pub occlusion_events: usize,
    pub occlusion_duration: (u32, u32),
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    /// Center noise of the synthetic next-frame box predictions.
    pub prediction_noise: f64,
    pub frame_stride: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_identities: 10,
            frames: 200,
            arena: (1280.0, 720.0),
            speed_range: (1.0, 6.0),
            box_size_range: (40.0, 120.0),
            kick_prob: 0.01,
            center_noise: 1.0,
            size_noise: 0.02,
            miss_rate: 0.02,
            fp_rate: 0.3,
            occlusion_events: 4,
            occlusion_duration: (3, 8),
            embedding_dim: 128,
            embedding_noise: 0.2,
            prediction_noise: 2.0,
            frame_stride: 1,
        }
    }
}

impl SimConfig {
    /// Scene used for the frame-rate comparison: 40 identities over 600
    /// frames with occlusions, misses and clutter.
    pub fn benchmark() -> Self {
        Self {
            seed: 2019,
            num_identities: 40,
            frames: 600,
            arena: (1920.0, 1080.0),
            speed_range: (2.0, 8.0),
            box_size_range: (50.0, 130.0),
            kick_prob: 0.01,
            center_noise: 1.5,
            size_noise: 0.03,
            miss_rate: 0.03,
            fp_rate: 0.5,
            occlusion_events: 30,
            occlusion_duration: (4, 12),
            embedding_dim: 128,
            embedding_noise: 0.2,
            prediction_noise: 3.0,
            frame_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.miss_rate) || !prob(self.kick_prob) {
            return bad("probabilities must be in [0, 1]".into());
        }
        if self.frame_stride < 1 {
            return bad("frame_stride must be at least 1".into());
        }
        if self.frames < 1 || self.num_identities < 1 || self.embedding_dim < 1 {
            return bad("frames, identities and embedding_dim must be positive".into());
        }
        let (smin, smax) = self.speed_range;
        let (bmin, bmax) = self.box_size_range;
        let (omin, omax) = self.occlusion_duration;
        if !(0.0 <= smin && smin <= smax)
            || !(0.0 < bmin && bmin <= bmax)
            || omin > omax
            || omin < 1
        {
            return bad("ranges must be ordered and non-degenerate".into());
        }
        if !(self.arena.0 > 2.0 * bmax && self.arena.1 > 2.0 * bmax) {
            return bad("arena must be larger than twice the largest box".into());
        }
        if [
            self.center_noise,
            self.size_noise,
            self.fp_rate,
            self.embedding_noise,
            self.prediction_noise,
        ]
        .iter()
        .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("noise levels and rates must be non-negative".into());
        }
        Ok(())
    }

    /// Overrides fields from `key=value` pairs; unknown keys are errors.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (key, value) in kv.iter() {
            let f = || kv.get_f64(key);
            let u = || kv.get_u64(key);
            match key {
                "seed" => self.seed = u()?,
                "identities" => self.num_identities = u()? as usize,
                "frames" => self.frames = u()? as u32,
                "arena_width" => self.arena.0 = f()?,
                "arena_height" => self.arena.1 = f()?,
                "speed_min" => self.speed_range.0 = f()?,
                "speed_max" => self.speed_range.1 = f()?,
                "box_min" => self.box_size_range.0 = f()?,
                "box_max" => self.box_size_range.1 = f()?,
                "kick_prob" => self.kick_prob = f()?,
                "center_noise" => self.center_noise = f()?,
                "size_noise" => self.size_noise = f()?,
                "miss_rate" => self.miss_rate = f()?,
                "fp_rate" => self.fp_rate = f()?,
                "occlusions" => self.occlusion_events = u()? as usize,
                "occlusion_min" => self.occlusion_duration.0 = u()? as u32,
                "occlusion_max" => self.occlusion_duration.1 = u()? as u32,
                "embedding_dim" => self.embedding_dim = u()? as usize,
                "embedding_noise" => self.embedding_noise = f()?,
                "prediction_noise" => self.prediction_noise = f()?,
                "frame_stride" => self.frame_stride = u()? as u32,
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown simulation key `{key}` (value `{value}`)"
                    )))
                }
            }
        }
        Ok(())
    }

    /// `key=value` rendering accepted by [`SimConfig::apply`].
    pub fn to_key_values(&self) -> String {
        format!(
            "seed={}\nidentities={}\nframes={}\narena_width={}\narena_height={}\nspeed_min={}\nspeed_max={}\n\
             box_min={}\nbox_max={}\nkick_prob={}\ncenter_noise={}\nsize_noise={}\nmiss_rate={}\nfp_rate={}\n\
             occlusions={}\nocclusion_min={}\nocclusion_max={}\nembedding_dim={}\nembedding_noise={}\n\
             prediction_noise={}\nframe_stride={}\n",
            self.seed,
            self.num_identities,
            self.frames,
            self.arena.0,
            self.arena.1,
            self.speed_range.0,
            self.speed_range.1,
            self.box_size_range.0,
            self.box_size_range.1,
            self.kick_prob,
            self.center_noise,
            self.size_noise,
            self.miss_rate,
            self.fp_rate,
            self.occlusion_events,
            self.occlusion_duration.0,
            self.occlusion_duration.1,
            self.embedding_dim,
            self.embedding_noise,
            self.prediction_noise,
            self.frame_stride,
        )
    }
}

/// A simulated detection with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection {
    pub detection: Detection,
    /// Ground-truth identity, `None` for clutter.
    pub source: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame: u32,
    pub gt: Vec<(u64, BBox)>,
    pub dets: Vec<SimDetection>,
}

/// Emitted frames, densely numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub frames: Vec<SimFrame>,
    pub embedding_dim: usize,
}

// Stream purposes.
const MOTION: u64 = 1;
const PROTOTYPE: u64 = 2;
const OBSERVE: u64 = 3;
const CLUTTER: u64 = 4;
const OCCLUSION: u64 = 5;
const LIFESPAN: u64 = 6;
const PREDICTION: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream for `(purpose, a, b)` under `seed`.
fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(splitmix64(splitmix64(purpose) ^ a) ^ b));
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize_in_place(&mut v);
            return v;
        }
    }
}

/// Noisy observation of `prototype`: the prototype plus an isotropic
/// Gaussian of expected norm `sigma`, re-normalized.
pub fn observe_embedding(rng: &mut ChaCha8Rng, prototype: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (prototype.len() as f64).sqrt();
    let mut v: Vec<f64> = prototype
        .iter()
        .map(|p| p + scale * gaussian(rng))
        .collect();
    normalize_in_place(&mut v);
    v
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Actor {
    id: u64,
    birth: u32,
    death: u32,
    w: f64,
    h: f64,
    pos: (f64, f64),
    vel: (f64, f64),
    prototype: Vec<f64>,
}

fn random_velocity(rng: &mut ChaCha8Rng, speed: (f64, f64)) -> (f64, f64) {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let s = uniform(rng, speed);
    (s * angle.cos(), s * angle.sin())
}

fn reflect(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if p < lo {
        (2.0 * lo - p, v.abs())
    } else if p > hi {
        (2.0 * hi - p, -v.abs())
    } else {
        (p, v)
    }
}

type World = (Vec<Vec<(u64, BBox)>>, Vec<Vec<f64>>);

/// Full-rate ground truth: per frame, the `(id, box)` of every live object.
fn simulate_world(c: &SimConfig) -> World {
    let min_life = (c.frames / 4).max(1);
    let mut actors: Vec<Actor> = (0..c.num_identities as u64)
        .map(|k| {
            let id = k + 1;
            let mut life = stream(c.seed, LIFESPAN, id, 0);
            let birth = if k % 2 == 0 || c.frames <= min_life {
                1
            } else {
                life.random_range(1..=c.frames - min_life + 1)
            };
            let span = life.random_range(min_life..=c.frames);
            let death = (birth + span - 1).min(c.frames);
            let mut m = stream(c.seed, MOTION, id, 0);
            let w = uniform(&mut m, c.box_size_range);
            let h = uniform(&mut m, c.box_size_range);
            let pos = (
                uniform(&mut m, (w / 2.0, c.arena.0 - w / 2.0)),
                uniform(&mut m, (h / 2.0, c.arena.1 - h / 2.0)),
            );
            let vel = random_velocity(&mut m, c.speed_range);
            let prototype = random_unit(&mut stream(c.seed, PROTOTYPE, id, 0), c.embedding_dim);
            Actor {
                id,
                birth,
                death,
                w,
                h,
                pos,
                vel,
                prototype,
            }
        })
        .collect();

    let mut truth = Vec::with_capacity(c.frames as usize);
    for f in 1..=c.frames {
        let mut frame = Vec::new();
        for a in actors.iter_mut() {
            if f > a.birth {
                let mut m = stream(c.seed, MOTION, a.id, f as u64);
                if m.random_bool(c.kick_prob) {
                    a.vel = random_velocity(&mut m, c.speed_range);
                }
                let (x, vx) = reflect(a.pos.0 + a.vel.0, a.vel.0, a.w / 2.0, c.arena.0 - a.w / 2.0);
                let (y, vy) = reflect(a.pos.1 + a.vel.1, a.vel.1, a.h / 2.0, c.arena.1 - a.h / 2.0);
                a.pos = (x, y);
                a.vel = (vx, vy);
            }
            if (a.birth..=a.death).contains(&f) {
                frame.push((
                    a.id,
                    BBox::new(a.pos.0, a.pos.1, a.w, a.h).expect("positive size"),
                ));
            }
        }
        truth.push(frame);
    }
    (truth, actors.into_iter().map(|a| a.prototype).collect())
}

/// `(id, first frame, last frame)` of each scripted occlusion.
fn occlusions(c: &SimConfig) -> Vec<(u64, u32, u32)> {
    (0..c.occlusion_events as u64)
        .map(|k| {
            let mut r = stream(c.seed, OCCLUSION, k, 0);
            let id = r.random_range(1..=c.num_identities as u64);
            let start = r.random_range(1..=c.frames);
            let len = r.random_range(c.occlusion_duration.0..=c.occlusion_duration.1);
            (id, start, start + len - 1)
        })
        .collect()
}

fn observe_frame(
    c: &SimConfig,
    f: u32,
    truth: &[(u64, BBox)],
    prototypes: &[Vec<f64>],
    occ: &[(u64, u32, u32)],
) -> Vec<SimDetection> {
    let mut dets = Vec::new();
    for (id, gt) in truth {
        if occ
            .iter()
            .any(|(oid, s, e)| oid == id && (*s..=*e).contains(&f))
        {
            continue;
        }
        let mut r = stream(c.seed, OBSERVE, f as u64, *id);
        if r.random_bool(c.miss_rate) {
            continue;
        }
        let cx = gt.cx() + c.center_noise * gaussian(&mut r);
        let cy = gt.cy() + c.center_noise * gaussian(&mut r);
        let w = gt.w() * (1.0 + c.size_noise * gaussian(&mut r)).max(0.1);
        let h = gt.h() * (1.0 + c.size_noise * gaussian(&mut r)).max(0.1);
        let confidence = r.random_range(0.5..1.0);
        let emb = observe_embedding(&mut r, &prototypes[(*id - 1) as usize], c.embedding_noise);
        let bbox = BBox::new(cx, cy, w, h).expect("positive size");
        dets.push(SimDetection {
            detection: Detection {
                bbox,
                confidence,
                embedding: Some(emb),
                frame: f,
            },
            source: Some(*id),
        });
    }
    let mut r = stream(c.seed, CLUTTER, f as u64, 0);
    let count = if c.fp_rate > 0.0 {
        Poisson::new(c.fp_rate)
            .expect("positive rate")
            .sample(&mut r) as usize
    } else {
        0
    };
    for _ in 0..count {
        let w = uniform(&mut r, c.box_size_range);
        let h = uniform(&mut r, c.box_size_range);
        let cx = uniform(&mut r, (w / 2.0, c.arena.0 - w / 2.0));
        let cy = uniform(&mut r, (h / 2.0, c.arena.1 - h / 2.0));
        let confidence = r.random_range(0.1..0.7);
        let emb = random_unit(&mut r, c.embedding_dim);
        dets.push(SimDetection {
            detection: Detection {
                bbox: BBox::new(cx, cy, w, h).expect("positive size"),
                confidence,
                embedding: Some(emb),
                frame: f,
            },
            source: None,
        });
    }
    dets
}

/// Generates a scene. Frames are emitted every `frame_stride` full-rate
/// frames and renumbered densely from 1.
pub fn generate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let (truth, prototypes) = simulate_world(config);
    let occ = occlusions(config);
    let frames = truth
        .iter()
        .enumerate()
        .map(|(i, gt)| {
            let f = i as u32 + 1;
            SimFrame {
                frame: f,
                gt: gt.clone(),
                dets: observe_frame(config, f, gt, &prototypes, &occ),
            }
        })
        .collect();
    let full = SimOutput {
        frames,
        embedding_dim: config.embedding_dim,
    };
    Ok(subsample(&full, config.frame_stride))
}

/// Keeps frames `1, 1 + stride, 1 + 2 stride, ...` and renumbers them
/// `1, 2, 3, ...`. Ground truth and detections move together.
pub fn subsample(stream: &SimOutput, stride: u32) -> SimOutput {
    let stride = stride.max(1);
    let frames = subsample_frames(&stream.frames, |f| f.frame, stride)
        .into_iter()
        .map(|(new, f)| {
            let mut f = f.clone();
            f.frame = new;
            for d in f.dets.iter_mut() {
                d.detection.frame = new;
            }
            f
        })
        .collect();
    SimOutput {
        frames,
        embedding_dim: stream.embedding_dim,
    }
}

/// Generic stride selection: returns `(new frame number, item)` for the
/// items whose frame is `1 + k * stride`.
pub fn subsample_frames<T>(
    items: &[T],
    frame_of: impl Fn(&T) -> u32,
    stride: u32,
) -> Vec<(u32, &T)> {
    let stride = stride.max(1);
    items
        .iter()
        .filter(|it| {
            let f = frame_of(it);
            f >= 1 && (f - 1).is_multiple_of(stride)
        })
        .map(|it| ((frame_of(it) - 1) / stride + 1, it))
        .collect()
}

/// Synthetic next-frame box predictions, one per detection: the truth box
/// of the detection's identity on the following emitted frame plus center
/// noise. Clutter, and objects absent from the next frame, predict their
/// own box.
pub fn synthetic_predictions(out: &SimOutput, config: &SimConfig) -> Vec<Vec<BBox>> {
    out.frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let next = out.frames.get(i + 1);
            frame
                .dets
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let target = d.source.and_then(|id| {
                        next.and_then(|n| n.gt.iter().find(|(gid, _)| *gid == id).map(|(_, b)| *b))
                    });
                    match target {
                        Some(b) => {
                            let mut r =
                                stream(config.seed, PREDICTION, frame.frame as u64, k as u64);
                            let dx = config.prediction_noise * gaussian(&mut r);
                            let dy = config.prediction_noise * gaussian(&mut r);
                            BBox::new(
                                b.cx() + dx,
                                b.cy() + dy,
                                d.detection.bbox.w(),
                                d.detection.bbox.h(),
                            )
                            .expect("positive size")
                        }
                        None => d.detection.bbox,
                    }
                })
                .collect()
        })
        .collect()
}
