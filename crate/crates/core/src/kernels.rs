//! Numerical building blocks of the joint detection / prediction /
//! re-identification network, implemented standalone.
//!
//! The learned layers themselves are not part of this crate. Their shape
//! contract is: the base feature maps `h x w x d` of two frames go through
//! [`correlate`], the resulting `h(2n+1) x w(2n+1)` map is summarized back
//! to `h x w x 512`, concatenated with the base features and reduced by a
//! 1x1 convolution before the box-regression head that predicts
//! [`MotionTargets`].

use ndarray::{Array2, Array3, ArrayView1};

use crate::error::{Error, Result};
use crate::geometry::{check_unit, normalize_in_place, BBox, LossWeights};

/// Dense `h x w x d` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Array3<f64>,
}

impl FeatureMap {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (h, w, d) = values.dim();
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "empty feature map {h}x{w}x{d}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature map has non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        d: usize,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn((h, w, d), f))
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }
}

/// Output of [`correlate`]: one `(2n+1) x (2n+1)` block per input location.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub n: usize,
    pub values: Array2<f64>,
}

impl CorrelationMap {
    /// Value for location `(row, col)` at displacement `(du, dv)`.
    pub fn at(&self, row: usize, col: usize, du: isize, dv: isize) -> f64 {
        let k = 2 * self.n + 1;
        let r = row * k + (du + self.n as isize) as usize;
        let c = col * k + (dv + self.n as isize) as usize;
        self.values[[r, c]]
    }
}

/// Correlates every feature vector of `prev` with the `(2n+1)^2`
/// neighbourhood around the same location in `curr`.
///
/// Neighbours outside the map contribute zero.
pub fn correlate(prev: &FeatureMap, curr: &FeatureMap, n: usize) -> Result<CorrelationMap> {
    if prev.dim() != curr.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {:?} and {:?}",
            prev.dim(),
            curr.dim()
        )));
    }
    if n < 1 {
        return Err(Error::InvalidParameter(
            "correlation radius must be at least 1".into(),
        ));
    }
    let (h, w, _) = prev.dim();
    let k = 2 * n + 1;
    let mut out = Array2::<f64>::zeros((h * k, w * k));
    let r = n as isize;
    for row in 0..h {
        for col in 0..w {
            let a: ArrayView1<f64> = prev.values.slice(ndarray::s![row, col, ..]);
            for du in -r..=r {
                let y = row as isize + du;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dv in -r..=r {
                    let x = col as isize + dv;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let b = curr.values.slice(ndarray::s![y as usize, x as usize, ..]);
                    out[[row * k + (du + r) as usize, col * k + (dv + r) as usize]] = a.dot(&b);
                }
            }
        }
    }
    Ok(CorrelationMap { n, values: out })
}

/// Inter-frame regression target between two boxes of one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionTargets {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

/// How center offsets are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetEncoding {
    /// Raw pixel offsets.
    #[default]
    Verbatim,
    /// Offsets divided by the previous box's width / height.
    Normalized,
}

/// Pixel center offsets and log size ratios from `prev` to `curr`.
pub fn encode_targets(prev: &BBox, curr: &BBox) -> MotionTargets {
    encode_targets_with(prev, curr, TargetEncoding::Verbatim)
}

pub fn encode_targets_with(prev: &BBox, curr: &BBox, enc: TargetEncoding) -> MotionTargets {
    let (sx, sy) = match enc {
        TargetEncoding::Verbatim => (1.0, 1.0),
        TargetEncoding::Normalized => (prev.w(), prev.h()),
    };
    MotionTargets {
        dx: (curr.cx() - prev.cx()) / sx,
        dy: (curr.cy() - prev.cy()) / sy,
        dw: (curr.w() / prev.w()).ln(),
        dh: (curr.h() / prev.h()).ln(),
    }
}

/// Inverse of [`encode_targets`].
pub fn decode_targets(prev: &BBox, t: &MotionTargets) -> Result<BBox> {
    decode_targets_with(prev, t, TargetEncoding::Verbatim)
}

pub fn decode_targets_with(prev: &BBox, t: &MotionTargets, enc: TargetEncoding) -> Result<BBox> {
    let (sx, sy) = match enc {
        TargetEncoding::Verbatim => (1.0, 1.0),
        TargetEncoding::Normalized => (prev.w(), prev.h()),
    };
    BBox::new(
        prev.cx() + t.dx * sx,
        prev.cy() + t.dy * sy,
        prev.w() * t.dw.exp(),
        prev.h() * t.dh.exp(),
    )
}

/// Summed smooth-L1 loss over components.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = (p - t).abs();
            if e < 1.0 {
                0.5 * e * e
            } else {
                e - 0.5
            }
        })
        .sum())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> Result<f64> {
    if true_class >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: true_class,
            len: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[true_class])
}

/// Look-up table of per-identity prototypes, one unit column per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct OimTable {
    // D x T
    columns: Array2<f64>,
    momentum: f64,
    scale: f64,
}

impl OimTable {
    /// Embedding size of the identity feature.
    pub const DEFAULT_DIM: usize = 256;

    /// Builds a table from a `D x T` matrix, normalizing every column.
    pub fn new(mut columns: Array2<f64>, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(
                "OIM momentum must be in [0, 1]".into(),
            ));
        }
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(Error::ShapeMismatch("empty OIM table".into()));
        }
        for mut col in columns.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm == 0.0 {
                return Err(Error::NotNormalized { norm });
            }
            col.mapv_inplace(|v| v / norm);
        }
        Ok(Self {
            columns,
            momentum,
            scale: 1.0,
        })
    }

    /// Multiplier applied to the similarity scores before the softmax.
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn identities(&self) -> usize {
        self.columns.ncols()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn column(&self, id: usize) -> ArrayView1<'_, f64> {
        self.columns.column(id)
    }

    pub fn columns(&self) -> &Array2<f64> {
        &self.columns
    }

    fn check(&self, x: &[f64], true_id: usize) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: self.dim(),
            });
        }
        if true_id >= self.identities() {
            return Err(Error::IndexOutOfRange {
                index: true_id,
                len: self.identities(),
            });
        }
        check_unit(x)
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let xv = ArrayView1::from(x);
        self.columns
            .t()
            .dot(&xv)
            .iter()
            .map(|s| self.scale * s)
            .collect()
    }
}

/// OIM loss of feature `x` for identity `true_id`, with the softmax
/// probabilities over all identities.
pub fn oim_forward(x: &[f64], table: &OimTable, true_id: usize) -> Result<(f64, Vec<f64>)> {
    table.check(x, true_id)?;
    let logits = table.logits(x);
    let loss = log_sum_exp(&logits) - logits[true_id];
    Ok((loss, softmax(&logits)))
}

/// Gradient of [`oim_forward`]'s loss with respect to `x`.
pub fn oim_grad(x: &[f64], table: &OimTable, true_id: usize) -> Result<Vec<f64>> {
    let (_, mut probs) = oim_forward(x, table, true_id)?;
    probs[true_id] -= 1.0;
    let residual = ArrayView1::from(&probs[..]);
    Ok(table
        .columns
        .dot(&residual)
        .iter()
        .map(|g| table.scale * g)
        .collect())
}

/// Moving-average update of the prototype of `true_id` toward `x`.
pub fn oim_update(table: &OimTable, x: &[f64], true_id: usize) -> Result<OimTable> {
    table.check(x, true_id)?;
    let mut next = table.clone();
    let mu = table.momentum;
    let mut col: Vec<f64> = table
        .column(true_id)
        .iter()
        .zip(x)
        .map(|(c, xi)| mu * c + (1.0 - mu) * xi)
        .collect();
    normalize_in_place(&mut col);
    next.columns
        .column_mut(true_id)
        .assign(&ArrayView1::from(&col[..]));
    Ok(next)
}

/// Per-term losses of one mini-batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTerms {
    pub cls: Vec<f64>,
    pub reg: Vec<f64>,
    /// Foreground flag of each `reg` entry; background boxes do not count.
    pub reg_foreground: Vec<bool>,
    pub tra: Vec<f64>,
    pub iden: Vec<f64>,
}

/// Normalizers of the four terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCounts {
    pub n: f64,
    pub n_fg: f64,
    pub n_tra: f64,
    pub n_iden: f64,
}

/// Weighted sum of the classification, box-regression, tracking and
/// identification losses, each averaged by its own count.
pub fn multitask_loss(terms: &LossTerms, counts: LossCounts, weights: LossWeights) -> Result<f64> {
    if terms.reg.len() != terms.reg_foreground.len() {
        return Err(Error::DimensionMismatch {
            left: terms.reg.len(),
            right: terms.reg_foreground.len(),
        });
    }
    fn term(name: &str, losses: impl Iterator<Item = f64>, count: f64) -> Result<f64> {
        let (sum, any) = losses.fold((0.0, false), |(s, _), l| (s + l, true));
        if !any {
            return Ok(0.0);
        }
        if count.is_nan() || count <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{name} count must be positive"
            )));
        }
        Ok(sum / count)
    }
    let reg = terms
        .reg
        .iter()
        .zip(&terms.reg_foreground)
        .filter(|(_, fg)| **fg)
        .map(|(l, _)| *l);
    Ok(
        weights.cls * term("N", terms.cls.iter().copied(), counts.n)?
            + weights.reg * term("N_fg", reg, counts.n_fg)?
            + weights.tra * term("N_tra", terms.tra.iter().copied(), counts.n_tra)?
            + weights.iden * term("N_iden", terms.iden.iter().copied(), counts.n_iden)?,
    )
}
