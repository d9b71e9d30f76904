//! Pairwise association scores between trajectories and detections.
//!
//! The combined score is `w1 * iou + w2 * id_similarity`, where the
//! identity term is the cosine of two unit embeddings clamped at zero so
//! that unrelated pairs score 0 under both metrics.

use crate::error::{Error, Result};
use crate::geometry::{check_unit, dot, BBox, Detection};
use crate::tracker::Trajectory;

/// Tolerance on `w1 + w2 = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Default suppression threshold of the detector post-processing.
pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Mixing weights for the overlap (`w1`) and identity (`w2`) terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityWeights {
    w1: f64,
    w2: f64,
}

impl AffinityWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1 >= 0.0 && w2 >= 0.0) || ((w1 + w2) - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "affinity weights must be non-negative and sum to 1, got w1={w1} w2={w2}"
            )));
        }
        Ok(Self { w1, w2 })
    }

    /// Overlap only.
    pub fn iou_only() -> Self {
        Self { w1: 1.0, w2: 0.0 }
    }

    /// Identity only; used for matching against buffered trajectories.
    pub fn id_only() -> Self {
        Self { w1: 0.0, w2: 1.0 }
    }

    /// Pedestrian preset with the identity term weighted up.
    pub fn mot16() -> Self {
        Self { w1: 0.2, w2: 0.8 }
    }

    pub fn w1(&self) -> f64 {
        self.w1
    }

    pub fn w2(&self) -> f64 {
        self.w2
    }

    /// Looks up a named preset: `default` or `mot16`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default()),
            "mot16" => Some(Self::mot16()),
            _ => None,
        }
    }
}

impl Default for AffinityWeights {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5 }
    }
}

/// Dense `rows x cols` score matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged matrix rows".into()));
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (al, at, ar, ab) = a.to_corner();
    let (bl, bt, br, bb) = b.to_corner();
    let iw = ar.min(br) - al.max(bl);
    let ih = ab.min(bb) - at.max(bt);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Cosine similarity of two unit embeddings, clamped to `[0, 1]`.
pub fn id_similarity(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::DimensionMismatch {
            left: e1.len(),
            right: e2.len(),
        });
    }
    check_unit(e1)?;
    check_unit(e2)?;
    Ok(dot(e1, e2).clamp(0.0, 1.0))
}

/// Builds the trajectory x detection affinity matrix.
///
/// Embeddings are only consulted (and required) when `w2 > 0`.
pub fn combined_affinity(
    trajs: &[&Trajectory],
    dets: &[&Detection],
    weights: AffinityWeights,
) -> Result<AffinityMatrix> {
    let use_id = weights.w2 > 0.0;
    if use_id {
        if let Some(index) = dets.iter().position(|d| d.embedding.is_none()) {
            return Err(Error::MissingEmbedding {
                index,
                w2: weights.w2,
            });
        }
    }
    let mut m = AffinityMatrix::zeros(trajs.len(), dets.len());
    for (i, t) in trajs.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let mut score = 0.0;
            if weights.w1 > 0.0 {
                score += weights.w1 * iou(t.head_box(), &d.bbox);
            }
            if use_id {
                let emb = d.embedding.as_deref().expect("checked above");
                score += weights.w2 * id_similarity(t.head_embedding(), emb)?;
            }
            m.set(i, j, score.clamp(0.0, 1.0));
        }
    }
    Ok(m)
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by descending confidence (ties by lower input
/// index); a candidate is dropped when its IoU with an already kept box
/// exceeds `iou_threshold`. Survivors keep their input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Indices of the detections that survive [`nms`], ascending.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corners(l: f64, t: f64, r: f64, b: f64) -> BBox {
        BBox::from_corners(l, t, r, b).unwrap()
    }

    fn det(b: BBox, conf: f64) -> Detection {
        Detection::new(1, b, conf)
    }

    #[test]
    fn iou_examples() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &corners(10.0, 10.0, 12.0, 12.0)), 0.0);
        let v = iou(&a, &corners(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &corners(2.0, 0.0, 4.0, 2.0)), 0.0);
    }

    #[test]
    fn id_similarity_examples() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert_eq!(id_similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(id_similarity(&e1, &e2).unwrap(), 0.0);
        assert_eq!(id_similarity(&e1, &[-1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn id_similarity_errors() {
        assert!(matches!(
            id_similarity(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            id_similarity(&[1.0, 0.1], &[1.0, 0.0]),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn weights_validation() {
        assert!(AffinityWeights::new(0.5, 0.5).is_ok());
        assert!(AffinityWeights::new(0.6, 0.5).is_err());
        assert!(AffinityWeights::new(-0.1, 1.1).is_err());
        assert_eq!(AffinityWeights::preset("mot16").unwrap().w2(), 0.8);
    }

    #[test]
    fn combined_examples() {
        // iou 0.6 and cosine 0.8 mix to 0.7 at equal weights.
        let b = corners(0.0, 0.0, 10.0, 10.0);
        // intersection 75, union 125
        let d_box = corners(2.5, 0.0, 12.5, 10.0);
        assert!((iou(&b, &d_box) - 0.6).abs() < 1e-15);
        let traj = Trajectory::new(1, b, vec![1.0, 0.0], 1);
        let d = det(d_box, 0.9).with_embedding(vec![0.8, 0.6]).unwrap();
        let m = combined_affinity(&[&traj], &[&d], AffinityWeights::default()).unwrap();
        assert!((m.get(0, 0) - 0.7).abs() < 1e-12);

        let m = combined_affinity(&[&traj], &[&d], AffinityWeights::id_only()).unwrap();
        assert!((m.get(0, 0) - 0.8).abs() < 1e-12);

        let same = det(b, 0.9);
        let m = combined_affinity(&[&traj], &[&same], AffinityWeights::iou_only()).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn missing_embedding_is_error_only_with_identity_weight() {
        let b = corners(0.0, 0.0, 10.0, 10.0);
        let traj = Trajectory::new(1, b, vec![1.0, 0.0], 1);
        let d = det(b, 0.9);
        assert!(matches!(
            combined_affinity(&[&traj], &[&d], AffinityWeights::default()),
            Err(Error::MissingEmbedding { index: 0, .. })
        ));
        assert!(combined_affinity(&[&traj], &[&d], AffinityWeights::iou_only()).is_ok());
    }

    #[test]
    fn nms_examples() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(nms(&[det(a, 0.5)], DEFAULT_NMS_IOU).len(), 1);

        let kept = nms(&[det(a, 0.4), det(a, 0.9)], DEFAULT_NMS_IOU);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);

        let b = corners(1.0, 1.0, 3.0, 3.0);
        assert_eq!(nms(&[det(a, 0.9), det(b, 0.8)], DEFAULT_NMS_IOU).len(), 2);
    }

    #[test]
    fn nms_ties_keep_lower_index() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        let b = corners(0.1, 0.0, 2.1, 2.0);
        assert_eq!(nms_indices(&[det(a, 0.7), det(b, 0.7)], 0.3), vec![0]);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
    }

    fn arb_unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0..1.0f64, dim).prop_filter_map("zero", |mut v| {
            let n = crate::geometry::l2_norm(&v);
            if n < 1e-3 {
                return None;
            }
            v.iter_mut().for_each(|x| *x /= n);
            Some(v)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    proptest! {
        #[test]
        fn combined_is_bounded_and_linear(
            boxes in proptest::collection::vec(arb_box(), 1..5),
            det_boxes in proptest::collection::vec((arb_box(), arb_unit(4)), 1..5),
            traj_embs in proptest::collection::vec(arb_unit(4), 5),
            w1 in 0.0..=1.0f64,
        ) {
            let trajs: Vec<Trajectory> = boxes
                .iter()
                .zip(&traj_embs)
                .enumerate()
                .map(|(i, (b, e))| Trajectory::new(i as u64 + 1, *b, e.clone(), 1))
                .collect();
            let dets: Vec<Detection> = det_boxes
                .iter()
                .map(|(b, e)| det(*b, 0.9).with_embedding(e.clone()).unwrap())
                .collect();
            let tr: Vec<&Trajectory> = trajs.iter().collect();
            let dr: Vec<&Detection> = dets.iter().collect();
            let w = AffinityWeights::new(w1, 1.0 - w1).unwrap();
            let mixed = combined_affinity(&tr, &dr, w).unwrap();
            let only_iou = combined_affinity(&tr, &dr, AffinityWeights::iou_only()).unwrap();
            let only_id = combined_affinity(&tr, &dr, AffinityWeights::id_only()).unwrap();
            for i in 0..tr.len() {
                for j in 0..dr.len() {
                    let v = mixed.get(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    let lin = w.w1() * only_iou.get(i, j) + w.w2() * only_id.get(i, j);
                    prop_assert!((v - lin).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn nms_order_invariant(
            items in proptest::collection::vec((arb_box(), 0u32..1000), 1..12),
            seed in any::<u64>(),
        ) {
            // Distinct confidences so the only tie rule never fires.
            let mut seen = std::collections::HashSet::new();
            let dets: Vec<Detection> = items
                .into_iter()
                .filter(|(_, c)| seen.insert(*c))
                .map(|(b, c)| det(b, c as f64 / 1000.0))
                .collect();
            let mut shuffled = dets.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let key = |v: Vec<Detection>| {
                let mut c: Vec<u64> = v.iter().map(|d| d.confidence.to_bits()).collect();
                c.sort_unstable();
                c
            };
            let kept = nms(&dets, 0.3);
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= 0.3);
                }
            }
            prop_assert_eq!(key(kept), key(nms(&shuffled, 0.3)));
        }
    }
}
