//! Box and detection primitives shared by the rest of the crate.

use crate::error::{Error, Result};

/// Tolerance on the L2 norm of an embedding accepted as unit length.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Axis-aligned box stored in center form.
///
/// Width and height are positive and finite; this is checked at
/// construction so geometry downstream never has to guard against
/// degenerate boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())
            || !cx.is_finite()
            || !cy.is_finite()
        {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from `(left, top, right, bottom)`.
    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        let w = right - left;
        let h = bottom - top;
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    /// Builds a box from MOT-style `(left, top, width, height)`.
    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `(left, top, right, bottom)` view of the box.
    pub fn to_corner(&self) -> (f64, f64, f64, f64) {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same size, center moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

/// Free-standing alias of [`BBox::to_corner`].
pub fn to_corner(b: &BBox) -> (f64, f64, f64, f64) {
    b.to_corner()
}

/// Inverse of [`to_corner`].
pub fn to_center(left: f64, top: f64, right: f64, bottom: f64) -> Result<BBox> {
    BBox::from_corners(left, top, right, bottom)
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// A detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub embedding: Option<Vec<f64>>,
    /// 1-based frame number.
    pub frame: u32,
}

impl Detection {
    pub fn new(frame: u32, bbox: BBox, confidence: f64) -> Self {
        Self {
            bbox,
            confidence,
            embedding: None,
            frame,
        }
    }

    /// Attaches an embedding, rejecting vectors that are not unit-norm.
    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Result<Self> {
        check_unit(&embedding)?;
        self.embedding = Some(embedding);
        Ok(self)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_unit(v: &[f64]) -> Result<()> {
    let norm = l2_norm(v);
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}

/// Scales `v` to unit length in place. Zero vectors are left untouched.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Weights of the four loss terms of the joint detection/tracking objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub tra: f64,
    pub iden: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            reg: 1.0,
            tra: 1.0,
            iden: 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corner_examples() {
        let b = BBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
        assert_eq!(b.to_corner(), (0.0, 0.0, 2.0, 2.0));
        let b = BBox::new(0.0, 0.0, 4.0, 2.0).unwrap();
        assert_eq!(to_corner(&b), (-2.0, -1.0, 2.0, 1.0));
    }

    #[test]
    fn area_examples() {
        assert_eq!(BBox::new(0.0, 0.0, 2.0, 2.0).unwrap().area(), 4.0);
        assert_eq!(area(&BBox::new(5.0, 5.0, 1.0, 1.0).unwrap()), 1.0);
        assert_eq!(BBox::new(0.0, 0.0, 3.0, 7.0).unwrap().area(), 21.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::from_corners(2.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn embedding_must_be_unit() {
        let bbox = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(1, bbox, 0.5)
            .with_embedding(vec![1.0, 1.0])
            .is_err());
        assert!(Detection::new(1, bbox, 0.5)
            .with_embedding(vec![0.6, 0.8])
            .is_ok());
    }

    // Dyadic coordinates keep the corner arithmetic exact, so the
    // round trip can be asserted bit-for-bit.
    fn dyadic() -> impl Strategy<Value = f64> {
        (-(1i64 << 20)..(1i64 << 20)).prop_map(|k| k as f64 / 16.0)
    }

    fn dyadic_pos() -> impl Strategy<Value = f64> {
        (1i64..(1i64 << 16)).prop_map(|k| k as f64 / 16.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn corner_round_trip_exact(cx in dyadic(), cy in dyadic(), w in dyadic_pos(), h in dyadic_pos()) {
            let b = BBox::new(cx, cy, w, h).unwrap();
            let (l, t, r, btm) = b.to_corner();
            prop_assert!(r > l && btm > t);
            prop_assert_eq!(to_center(l, t, r, btm).unwrap(), b);
        }

        #[test]
        fn area_translation_invariant(cx in dyadic(), cy in dyadic(), w in dyadic_pos(), h in dyadic_pos(), dx in dyadic(), dy in dyadic()) {
            let b = BBox::new(cx, cy, w, h).unwrap();
            prop_assert_eq!(b.translated(dx, dy).area(), b.area());
        }
    }
}
