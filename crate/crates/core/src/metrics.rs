//! CLEAR-MOT evaluation.
//!
//! Correspondences between ground-truth objects and hypotheses are built
//! frame by frame: a pairing from an earlier frame is kept while its IoU
//! stays at or above the gate, the rest are matched by a Hungarian solve
//! maximizing IoU. A ground-truth object whose matched hypothesis id
//! differs from its last one counts as an identity switch.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::affinity::{iou, AffinityMatrix};
use crate::assignment::solve_max;
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DEFAULT_IOU_GATE: f64 = 0.5;
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

/// Per-frame `(id, box)` lists keyed by frame number.
pub type FrameBoxes = BTreeMap<u32, Vec<(u64, BBox)>>;

/// A hypothesis box with its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

pub type ScoredFrames = BTreeMap<u32, Vec<ScoredBox>>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    /// Mean IoU of matched pairs, in `[0, 1]`.
    pub motp: f64,
    pub ids: usize,
    pub mt: usize,
    pub ml: usize,
    pub frag: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt_total: usize,
    pub matches: usize,
    pub iou_sum: f64,
    pub gt_trajectories: usize,
}

impl MotReport {
    fn finish(&mut self) {
        self.mota = mota(self.fn_, self.fp, self.ids, self.gt_total);
        self.motp = if self.matches > 0 {
            self.iou_sum / self.matches as f64
        } else {
            0.0
        };
    }

    /// Sums the counters of several sequences and recomputes the ratios.
    pub fn merge<'a>(reports: impl IntoIterator<Item = &'a MotReport>) -> MotReport {
        let mut out = MotReport::default();
        for r in reports {
            out.ids += r.ids;
            out.mt += r.mt;
            out.ml += r.ml;
            out.frag += r.frag;
            out.fp += r.fp;
            out.fn_ += r.fn_;
            out.gt_total += r.gt_total;
            out.matches += r.matches;
            out.iou_sum += r.iou_sum;
            out.gt_trajectories += r.gt_trajectories;
        }
        out.finish();
        out
    }

    /// Line-oriented `key=value` rendering.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mota={:.6}", self.mota);
        let _ = writeln!(s, "motp={:.6}", self.motp);
        let _ = writeln!(s, "ids={}", self.ids);
        let _ = writeln!(s, "mt={}", self.mt);
        let _ = writeln!(s, "ml={}", self.ml);
        let _ = writeln!(s, "frag={}", self.frag);
        let _ = writeln!(s, "fp={}", self.fp);
        let _ = writeln!(s, "fn={}", self.fn_);
        let _ = writeln!(s, "gt_total={}", self.gt_total);
        let _ = writeln!(s, "gt_trajectories={}", self.gt_trajectories);
        let _ = writeln!(s, "matches={}", self.matches);
        s
    }

    /// Table row cells: MOTA, MOTP (percent), IDS, MT, ML, Frag, FP, FN.
    pub fn table_cells(&self) -> [String; 8] {
        [
            format!("{:.2}", self.mota * 100.0),
            format!("{:.2}", self.motp * 100.0),
            self.ids.to_string(),
            self.mt.to_string(),
            self.ml.to_string(),
            self.frag.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
        ]
    }
}

pub const TABLE_COLUMNS: [&str; 8] = ["MOTA", "MOTP", "IDS", "MT", "ML", "Frag", "FP", "FN"];

/// Renders rows of `(label, cells)` as an aligned plain-text table.
pub fn render_table(
    label_header: &str,
    rows: &[(String, Vec<String>)],
    extra_columns: &[&str],
) -> String {
    let mut header: Vec<String> = vec![label_header.to_string()];
    header.extend(TABLE_COLUMNS.iter().map(|s| s.to_string()));
    header.extend(extra_columns.iter().map(|s| s.to_string()));
    let mut lines: Vec<Vec<String>> = vec![header];
    for (label, cells) in rows {
        let mut l = vec![label.clone()];
        l.extend(cells.iter().cloned());
        lines.push(l);
    }
    let ncol = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| {
            lines
                .iter()
                .filter_map(|l| l.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// `1 - (fn + fp + ids) / gt`. With no ground truth the score is 1 when
/// there are no errors and negative infinity otherwise.
pub fn mota(fn_: usize, fp: usize, ids: usize, gt_total: usize) -> f64 {
    let errors = fn_ + fp + ids;
    if gt_total == 0 {
        return if errors == 0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - errors as f64 / gt_total as f64
}

#[derive(Default)]
struct GtHistory {
    frames: usize,
    tracked: usize,
    ever_tracked: bool,
    last_tracked: bool,
    frag: usize,
}

fn geometry_key(b: &BBox) -> [u64; 4] {
    [b.cx(), b.cy(), b.w(), b.h()].map(|v| v.to_bits())
}

/// Evaluates hypotheses `hyp` against ground truth `gt`.
pub fn evaluate(gt: &FrameBoxes, hyp: &FrameBoxes, iou_gate: f64) -> Result<MotReport> {
    if !(iou_gate > 0.0 && iou_gate <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "iou gate {iou_gate} outside (0, 1]"
        )));
    }
    let mut report = MotReport::default();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut history: BTreeMap<u64, GtHistory> = BTreeMap::new();
    let empty = Vec::new();

    let mut frames: Vec<u32> = gt.keys().chain(hyp.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();

    for frame in frames {
        let mut g: Vec<(u64, BBox)> = gt.get(&frame).unwrap_or(&empty).clone();
        let mut h: Vec<(u64, BBox)> = hyp.get(&frame).unwrap_or(&empty).clone();
        g.sort_by_key(|(id, _)| *id);
        h.sort_by(|a, b| {
            geometry_key(&a.1)
                .cmp(&geometry_key(&b.1))
                .then(a.0.cmp(&b.0))
        });

        let mut g_match: Vec<Option<usize>> = vec![None; g.len()];
        let mut h_used = vec![false; h.len()];

        // Keep still-valid correspondences.
        for (gi, (gid, gbox)) in g.iter().enumerate() {
            let Some(prev) = last_match.get(gid) else {
                continue;
            };
            if let Some(hi) = h.iter().position(|(hid, _)| hid == prev) {
                if !h_used[hi] && iou(gbox, &h[hi].1) >= iou_gate {
                    g_match[gi] = Some(hi);
                    h_used[hi] = true;
                }
            }
        }

        // Hungarian on the rest. Pairs under the gate get a penalty larger
        // than any attainable IoU total, so the solve first maximizes the
        // number of valid pairs and then their IoU.
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let penalty = -((free_g.len().min(free_h.len()) + 1) as f64);
            let m = AffinityMatrix::from_fn(free_g.len(), free_h.len(), |r, c| {
                let v = iou(&g[free_g[r]].1, &h[free_h[c]].1);
                if v >= iou_gate {
                    v
                } else {
                    penalty
                }
            });
            for (r, c) in solve_max(&m, iou_gate).pairs {
                let (gi, hi) = (free_g[r], free_h[c]);
                g_match[gi] = Some(hi);
                h_used[hi] = true;
                if let Some(prev) = last_match.get(&g[gi].0) {
                    if *prev != h[hi].0 {
                        report.ids += 1;
                    }
                }
            }
        }

        for (gi, (gid, gbox)) in g.iter().enumerate() {
            let hist = history.entry(*gid).or_default();
            hist.frames += 1;
            match g_match[gi] {
                Some(hi) => {
                    report.matches += 1;
                    report.iou_sum += iou(gbox, &h[hi].1);
                    last_match.insert(*gid, h[hi].0);
                    hist.tracked += 1;
                    if hist.ever_tracked && !hist.last_tracked {
                        hist.frag += 1;
                    }
                    hist.ever_tracked = true;
                    hist.last_tracked = true;
                }
                None => {
                    report.fn_ += 1;
                    hist.last_tracked = false;
                }
            }
        }
        report.fp += h_used.iter().filter(|u| !**u).count();
        report.gt_total += g.len();
    }

    report.gt_trajectories = history.len();
    for hist in history.values() {
        let ratio = hist.tracked as f64 / hist.frames as f64;
        if ratio >= MOSTLY_TRACKED {
            report.mt += 1;
        } else if ratio <= MOSTLY_LOST {
            report.ml += 1;
        }
        report.frag += hist.frag;
    }
    report.finish();
    Ok(report)
}

/// The nine detection thresholds `0.1, 0.2, ..., 0.9`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Best value of one metric across a sweep and the threshold reaching it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Best<T> {
    pub value: T,
    pub threshold: f64,
}

/// Per-metric optimum across thresholds: maxima for MOTA, MOTP and MT,
/// minima for the rest. Ties go to the lowest threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepBest {
    pub mota: Best<f64>,
    pub motp: Best<f64>,
    pub ids: Best<usize>,
    pub mt: Best<usize>,
    pub ml: Best<usize>,
    pub frag: Best<usize>,
    pub fp: Best<usize>,
    pub fn_: Best<usize>,
}

impl SweepBest {
    pub fn table_cells(&self) -> [String; 8] {
        [
            format!("{:.2}", self.mota.value * 100.0),
            format!("{:.2}", self.motp.value * 100.0),
            self.ids.value.to_string(),
            self.mt.value.to_string(),
            self.ml.value.to_string(),
            self.frag.value.to_string(),
            self.fp.value.to_string(),
            self.fn_.value.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<(f64, MotReport)>,
    pub best: SweepBest,
    /// Index into `rows` of the highest-MOTA threshold.
    pub best_mota_row: usize,
}

impl Sweep {
    pub fn best_mota(&self) -> &(f64, MotReport) {
        &self.rows[self.best_mota_row]
    }
}

fn pick<T: Copy>(
    rows: &[(f64, MotReport)],
    get: impl Fn(&MotReport) -> T,
    better: impl Fn(T, T) -> bool,
) -> Best<T> {
    let mut best = Best {
        value: get(&rows[0].1),
        threshold: rows[0].0,
    };
    for (t, r) in &rows[1..] {
        let v = get(r);
        if better(v, best.value) {
            best = Best {
                value: v,
                threshold: *t,
            };
        }
    }
    best
}

/// Keeps hypotheses with confidence at or above `threshold`.
pub fn filter_by_confidence(hyp: &ScoredFrames, threshold: f64) -> FrameBoxes {
    hyp.iter()
        .map(|(f, boxes)| {
            (
                *f,
                boxes
                    .iter()
                    .filter(|b| b.confidence >= threshold)
                    .map(|b| (b.id, b.bbox))
                    .collect(),
            )
        })
        .collect()
}

/// Evaluates `hyp` filtered at each threshold and collects the per-metric
/// optimum.
pub fn sweep_thresholds(
    gt: &FrameBoxes,
    hyp: &ScoredFrames,
    thresholds: &[f64],
    iou_gate: f64,
) -> Result<Sweep> {
    if thresholds.is_empty() {
        return Err(Error::InvalidParameter("empty threshold list".into()));
    }
    let rows = thresholds
        .iter()
        .map(|&t| Ok((t, evaluate(gt, &filter_by_confidence(hyp, t), iou_gate)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(sweep_from_reports(rows))
}

/// Builds the sweep summary from already evaluated `(threshold, report)`
/// rows.
pub fn sweep_from_reports(rows: Vec<(f64, MotReport)>) -> Sweep {
    assert!(!rows.is_empty(), "sweep needs at least one row");
    let hi = |a: f64, b: f64| a > b;
    let hi_n = |a: usize, b: usize| a > b;
    let lo_n = |a: usize, b: usize| a < b;
    let best = SweepBest {
        mota: pick(&rows, |r| r.mota, hi),
        motp: pick(&rows, |r| r.motp, hi),
        ids: pick(&rows, |r| r.ids, lo_n),
        mt: pick(&rows, |r| r.mt, hi_n),
        ml: pick(&rows, |r| r.ml, lo_n),
        frag: pick(&rows, |r| r.frag, lo_n),
        fp: pick(&rows, |r| r.fp, lo_n),
        fn_: pick(&rows, |r| r.fn_, lo_n),
    };
    let best_mota_row = rows
        .iter()
        .position(|(t, _)| *t == best.mota.threshold)
        .expect("threshold comes from rows");
    Sweep {
        rows,
        best,
        best_mota_row,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64) -> BBox {
        BBox::new(x, 0.0, 10.0, 10.0).unwrap()
    }

    fn seq(items: &[(u32, u64, f64)]) -> FrameBoxes {
        let mut m = FrameBoxes::new();
        for &(f, id, x) in items {
            m.entry(f).or_default().push((id, b(x)));
        }
        m
    }

    #[test]
    fn perfect() {
        let gt = seq(&[(1, 1, 0.0), (1, 2, 50.0), (2, 1, 1.0), (2, 2, 51.0)]);
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.motp, r.ids, r.fp, r.fn_), (1.0, 1.0, 0, 0, 0));
        assert_eq!((r.mt, r.ml, r.frag), (2, 0, 0));
    }

    #[test]
    fn empty_hypotheses() {
        let gt = seq(&(1..=10).map(|f| (f, 1, 0.0)).collect::<Vec<_>>());
        let r = evaluate(&gt, &FrameBoxes::new(), 0.5).unwrap();
        assert_eq!((r.fn_, r.mota, r.ml, r.mt), (10, 0.0, 1, 0));
    }

    #[test]
    fn single_switch() {
        let gt = seq(&[(1, 1, 0.0), (2, 1, 0.0), (3, 1, 0.0), (4, 1, 0.0)]);
        let hyp = seq(&[(1, 7, 0.0), (2, 7, 0.0), (3, 9, 0.0), (4, 9, 0.0)]);
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        assert_eq!((r.ids, r.frag, r.fp, r.fn_), (1, 0, 0, 0));
        assert_eq!(r.mota, 0.75);
    }

    #[test]
    fn gate_validation() {
        let gt = FrameBoxes::new();
        assert!(evaluate(&gt, &gt, 0.0).is_err());
        assert!(evaluate(&gt, &gt, 1.5).is_err());
        assert!(evaluate(&gt, &gt, 1.0).is_ok());
    }

    #[test]
    fn merge_sums_counters() {
        let gt = seq(&[(1, 1, 0.0), (2, 1, 0.0)]);
        let hyp = seq(&[(1, 1, 0.0)]);
        let r = evaluate(&gt, &hyp, 0.5).unwrap();
        let m = MotReport::merge([&r, &r]);
        assert_eq!((m.fn_, m.gt_total, m.matches), (2, 4, 2));
        assert_eq!(m.mota, r.mota);
    }

    fn scored(items: &[(u32, u64, f64, f64)]) -> ScoredFrames {
        let mut m = ScoredFrames::new();
        for &(f, id, x, c) in items {
            m.entry(f).or_default().push(ScoredBox {
                id,
                bbox: b(x),
                confidence: c,
            });
        }
        m
    }

    #[test]
    fn single_threshold_sweep_is_plain_evaluate() {
        let gt = seq(&[(1, 1, 0.0), (2, 1, 0.0)]);
        let hyp = scored(&[(1, 1, 0.0, 0.7), (2, 1, 0.0, 0.3), (2, 5, 90.0, 0.9)]);
        let s = sweep_thresholds(&gt, &hyp, &[0.5], 0.5).unwrap();
        let direct = evaluate(&gt, &filter_by_confidence(&hyp, 0.5), 0.5).unwrap();
        assert_eq!(s.rows, vec![(0.5, direct.clone())]);
        assert_eq!(s.best.mota.value, direct.mota);
    }

    #[test]
    fn sweep_picks_argmax() {
        // True boxes at confidence 0.35, clutter at 0.25: 0.3 drops the
        // clutter and keeps every true box.
        let mut items = Vec::new();
        for f in 1..=10 {
            items.push((f, 1, 0.0, 0.35));
            items.push((f, 2, 200.0, 0.25));
        }
        let gt = seq(&(1..=10).map(|f| (f, 1, 0.0)).collect::<Vec<_>>());
        let s = sweep_thresholds(&gt, &scored(&items), &default_thresholds(), 0.5).unwrap();
        assert_eq!(s.best.mota.threshold, 0.3);
        assert_eq!(s.best.mota.value, 1.0);
        assert_eq!(s.best_mota().0, 0.3);
        let fps: Vec<usize> = s.rows.iter().map(|r| r.1.fp).collect();
        assert!(fps.windows(2).all(|w| w[0] >= w[1]));
    }
}
