//! File formats.
//!
//! * MOT lines: `frame,id,left,top,width,height,conf,x,y,z`, 1-based frames,
//!   `id = -1` for raw detections. Readers accept 6 to 10 fields; a
//!   missing confidence reads as 1.
//! * Embedding sidecar: a `dim=D` header, then
//!   `frame,det_index,v1,...,vD` per line, where `det_index` is the 0-based
//!   position of the detection within its frame in the detection file.
//! * Prediction sidecar: MOT lines whose `frame` and `id` columns hold the
//!   source detection's frame and 0-based index; the box is where that
//!   detection is expected on the next processed frame.
//! * Config: `key=value` lines, `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{l2_norm, normalize_in_place, BBox, Detection};
use crate::metrics::{FrameBoxes, ScoredBox, ScoredFrames};
use crate::tracker::TrackOutput;

/// Embeddings whose norm is further than this from 1 are reported.
pub const NORM_WARN_TOL: f64 = 1e-3;

/// One MOT-format record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotLine {
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotLine {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::from_ltwh(self.left, self.top, self.width, self.height)
    }

    pub fn from_box(frame: u32, id: i64, b: &BBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            left: b.left(),
            top: b.top(),
            width: b.w(),
            height: b.h(),
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }

    /// Fixed six-decimal rendering, without the trailing newline.
    pub fn format(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.frame,
            self.id,
            self.left,
            self.top,
            self.width,
            self.height,
            self.conf,
            self.x,
            self.y,
            self.z
        )
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        if !(6..=10).contains(&fields.len()) {
            return Err(format!("expected 6 to 10 fields, found {}", fields.len()));
        }
        let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
            match fields.get(i) {
                None => Ok(if name == "conf" { 1.0 } else { -1.0 }),
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| format!("invalid {name} `{s}`"))
                    .and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(format!("non-finite {name}"))
                        }
                    }),
            }
        };
        let frame = fields[0]
            .parse::<u32>()
            .map_err(|_| format!("invalid frame `{}`", fields[0]))?;
        if frame < 1 {
            return Err("frame numbers start at 1".into());
        }
        let id = fields[1]
            .parse::<i64>()
            .or_else(|_| {
                fields[1]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0)
                    .map(|v| v as i64)
                    .ok_or(())
            })
            .map_err(|_| format!("invalid id `{}`", fields[1]))?;
        let line = MotLine {
            frame,
            id,
            left: num(2, "left")?,
            top: num(3, "top")?,
            width: num(4, "width")?,
            height: num(5, "height")?,
            conf: num(6, "conf")?,
            x: num(7, "x")?,
            y: num(8, "y")?,
            z: num(9, "z")?,
        };
        if !(line.width > 0.0 && line.height > 0.0) {
            return Err(format!("non-positive size {}x{}", line.width, line.height));
        }
        Ok(line)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads every record of a MOT-format file.
pub fn read_mot(path: &Path) -> Result<Vec<MotLine>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(n, l)| MotLine::parse(l).map_err(|m| Error::parse(path, n, m)))
        .collect()
}

/// Groups records by frame, ascending, keeping file order inside a frame.
fn group<T>(items: impl IntoIterator<Item = (u32, T)>) -> Vec<(u32, Vec<T>)> {
    let mut map: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for (f, item) in items {
        map.entry(f).or_default().push(item);
    }
    map.into_iter().collect()
}

/// Reads detections grouped by frame.
pub fn read_detections(path: &Path) -> Result<Vec<(u32, Vec<Detection>)>> {
    let lines = read_mot(path)?;
    let dets = lines
        .into_iter()
        .map(|l| Ok((l.frame, Detection::new(l.frame, l.bbox()?, l.conf))))
        .collect::<Result<Vec<_>>>()?;
    Ok(group(dets))
}

pub fn write_detections(path: &Path, frames: &[(u32, Vec<Detection>)]) -> Result<()> {
    let mut s = String::new();
    for (f, dets) in frames {
        for d in dets {
            let _ = writeln!(
                s,
                "{}",
                MotLine::from_box(*f, -1, &d.bbox, d.confidence).format()
            );
        }
    }
    write_text(path, &s)
}

/// Embedding vectors keyed by `(frame, det_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<(u32, usize), Vec<f64>>,
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let Some((n, header)) = lines.next() else {
        return Ok(EmbeddingTable::default());
    };
    let dim = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse::<usize>().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::parse(path, n, "expected header `dim=D`"))?;
    let mut table = EmbeddingTable {
        dim,
        vectors: BTreeMap::new(),
    };
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(Error::parse(
                path,
                n,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        let frame = fields[0]
            .parse::<u32>()
            .map_err(|_| Error::parse(path, n, format!("invalid frame `{}`", fields[0])))?;
        let index = fields[1].parse::<usize>().map_err(|_| {
            Error::parse(path, n, format!("invalid detection index `{}`", fields[1]))
        })?;
        let mut v = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::parse(path, n, "invalid embedding value"))?;
        let norm = l2_norm(&v);
        if norm == 0.0 {
            return Err(Error::parse(path, n, "zero embedding"));
        }
        if (norm - 1.0).abs() > NORM_WARN_TOL {
            log::warn!(
                "{}:{n}: embedding norm {norm:.6}, re-normalizing",
                path.display()
            );
        }
        normalize_in_place(&mut v);
        if table.vectors.insert((frame, index), v).is_some() {
            return Err(Error::parse(
                path,
                n,
                format!("duplicate embedding for ({frame}, {index})"),
            ));
        }
    }
    Ok(table)
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut s = format!("dim={}\n", table.dim);
    for ((f, i), v) in &table.vectors {
        let _ = write!(s, "{f},{i}");
        for x in v {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Attaches embeddings to detections by `(frame, position in frame)`.
/// Detections without an entry are left without an embedding.
pub fn attach_embeddings(
    frames: &mut [(u32, Vec<Detection>)],
    table: &EmbeddingTable,
) -> Result<()> {
    for (f, dets) in frames.iter_mut() {
        for (i, d) in dets.iter_mut().enumerate() {
            if let Some(v) = table.vectors.get(&(*f, i)) {
                d.embedding = Some(v.clone());
            }
        }
    }
    Ok(())
}

/// Predicted boxes keyed by the source detection's `(frame, det_index)`.
pub type PredictionTable = BTreeMap<(u32, usize), BBox>;

pub fn read_predictions(path: &Path) -> Result<PredictionTable> {
    let mut out = PredictionTable::new();
    for (n, l) in content_lines(&read_text(path)?) {
        let line = MotLine::parse(l).map_err(|m| Error::parse(path, n, m))?;
        let index = usize::try_from(line.id)
            .map_err(|_| Error::parse(path, n, format!("invalid detection index {}", line.id)))?;
        out.insert((line.frame, index), line.bbox()?);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, table: &PredictionTable) -> Result<()> {
    let mut s = String::new();
    for ((f, i), b) in table {
        let _ = writeln!(s, "{}", MotLine::from_box(*f, *i as i64, b, 1.0).format());
    }
    write_text(path, &s)
}

/// Renders tracker output in MOT format. Rows come out in the order
/// given; `interpolated` boxes are written only when `include_interpolated`.
pub fn format_results(outputs: &[TrackOutput], include_interpolated: bool) -> String {
    let mut s = String::new();
    for o in outputs
        .iter()
        .filter(|o| include_interpolated || !o.interpolated)
    {
        let _ = writeln!(
            s,
            "{}",
            MotLine::from_box(o.frame, o.id as i64, &o.bbox, o.confidence).format()
        );
    }
    s
}

pub fn write_results(
    path: &Path,
    outputs: &[TrackOutput],
    include_interpolated: bool,
) -> Result<()> {
    if let Some(o) = outputs.iter().find(|o| o.id < 1) {
        return Err(Error::InvalidParameter(format!(
            "track id {} is not positive",
            o.id
        )));
    }
    write_text(path, &format_results(outputs, include_interpolated))
}

/// Writes ground truth: one line per `(frame, id, box)`, confidence 1.
pub fn write_ground_truth(path: &Path, frames: &[(u32, Vec<(u64, BBox)>)]) -> Result<()> {
    let mut s = String::new();
    for (f, boxes) in frames {
        for (id, b) in boxes {
            let _ = writeln!(s, "{}", MotLine::from_box(*f, *id as i64, b, 1.0).format());
        }
    }
    write_text(path, &s)
}

fn positive_id(path: &Path, l: &MotLine) -> Result<u64> {
    u64::try_from(l.id)
        .ok()
        .filter(|id| *id >= 1)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "{}: frame {} has id {}",
                path.display(),
                l.frame,
                l.id
            ))
        })
}

/// Reads a ground-truth or result file as per-frame `(id, box)` lists.
pub fn read_tracks(path: &Path) -> Result<FrameBoxes> {
    let mut out = FrameBoxes::new();
    for l in read_mot(path)? {
        out.entry(l.frame)
            .or_default()
            .push((positive_id(path, &l)?, l.bbox()?));
    }
    Ok(out)
}

/// Like [`read_tracks`] but keeps confidences.
pub fn read_scored_tracks(path: &Path) -> Result<ScoredFrames> {
    let mut out = ScoredFrames::new();
    for l in read_mot(path)? {
        out.entry(l.frame).or_default().push(ScoredBox {
            id: positive_id(path, &l)?,
            bbox: l.bbox()?,
            confidence: l.conf,
        });
    }
    Ok(out)
}

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, line) in content_lines(text) {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse("<config>", n, format!("expected key=value, found `{line}`"))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            entries.retain(|(old, _)| *old != k);
            entries.push((k, v));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::parse(path, line, message),
            other => other,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.retain(|(k, _)| k != key);
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key).unwrap_or_default();
        v.parse::<f64>()
            .map_err(|_| Error::InvalidParameter(format!("`{key}` expects a number, got `{v}`")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let v = self.get(key).unwrap_or_default();
        v.parse::<u64>().map_err(|_| {
            Error::InvalidParameter(format!("`{key}` expects a non-negative integer, got `{v}`"))
        })
    }
}
