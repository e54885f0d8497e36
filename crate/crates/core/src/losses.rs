//! Depth losses with analytic gradients with respect to the predictions.

use serde::{Deserialize, Serialize};

use crate::bins::{soft_argmax, soft_argmax_gradient, softmax, SoftArgmaxConfig};
use crate::error::{Error, Result};

/// Loss value and its gradient with respect to a flat prediction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Loss value and per-row gradients for row-structured predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLossOutput {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Targets `y` and predictions `ŷ` for the scalar regression losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    targets: Vec<f64>,
    predictions: Vec<f64>,
}

impl LossBatch {
    pub fn new(targets: Vec<f64>, predictions: Vec<f64>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Invalid("loss batch must not be empty".into()));
        }
        if targets.len() != predictions.len() {
            return Err(Error::Invalid(format!(
                "{} targets but {} predictions",
                targets.len(),
                predictions.len()
            )));
        }
        if targets.iter().chain(&predictions).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("loss batch values must be finite".into()));
        }
        Ok(Self {
            targets,
            predictions,
        })
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Residuals `ŷ - y`.
    fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.predictions
            .iter()
            .zip(&self.targets)
            .map(|(p, t)| p - t)
    }
}

/// Target bins and raw logits for bin classification.
#[derive(Debug, Clone, PartialEq)]
pub struct BinClassBatch {
    target_bins: Vec<usize>,
    logit_rows: Vec<Vec<f64>>,
}

impl BinClassBatch {
    pub fn new(target_bins: Vec<usize>, logit_rows: Vec<Vec<f64>>) -> Result<Self> {
        if target_bins.is_empty() {
            return Err(Error::Invalid(
                "classification batch must not be empty".into(),
            ));
        }
        if target_bins.len() != logit_rows.len() {
            return Err(Error::Invalid(format!(
                "{} targets but {} logit rows",
                target_bins.len(),
                logit_rows.len()
            )));
        }
        let k = logit_rows[0].len();
        if k < 2 {
            return Err(Error::Invalid("need at least two bins".into()));
        }
        for (row, &t) in logit_rows.iter().zip(&target_bins) {
            if row.len() != k {
                return Err(Error::Invalid(format!(
                    "inconsistent bin count: {} vs {k}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("logits must be finite".into()));
            }
            if t >= k {
                return Err(Error::Invalid(format!(
                    "target bin {t} out of range for {k} bins"
                )));
            }
        }
        Ok(Self {
            target_bins,
            logit_rows,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.logit_rows[0].len()
    }

    pub fn target_bins(&self) -> &[usize] {
        &self.target_bins
    }

    pub fn logit_rows(&self) -> &[Vec<f64>] {
        &self.logit_rows
    }

    pub fn len(&self) -> usize {
        self.target_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_bins.is_empty()
    }
}

/// Lower clamp for ordinal threshold probabilities; upper clamp is `1 - ORDINAL_EPS`.
pub const ORDINAL_EPS: f64 = 1e-7;

/// Target bins with `K - 1` threshold probabilities `P(bin > k)` per object.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalBatch {
    target_bins: Vec<usize>,
    threshold_prob_rows: Vec<Vec<f64>>,
}

impl OrdinalBatch {
    /// Probabilities are clamped into `[1e-7, 1 - 1e-7]`.
    pub fn new(target_bins: Vec<usize>, threshold_prob_rows: Vec<Vec<f64>>) -> Result<Self> {
        if target_bins.is_empty() {
            return Err(Error::Invalid("ordinal batch must not be empty".into()));
        }
        if target_bins.len() != threshold_prob_rows.len() {
            return Err(Error::Invalid(format!(
                "{} targets but {} probability rows",
                target_bins.len(),
                threshold_prob_rows.len()
            )));
        }
        let thresholds = threshold_prob_rows[0].len();
        if thresholds == 0 {
            return Err(Error::Invalid("need at least one threshold".into()));
        }
        let mut rows = Vec::with_capacity(threshold_prob_rows.len());
        for (row, &t) in threshold_prob_rows.into_iter().zip(&target_bins) {
            if row.len() != thresholds {
                return Err(Error::Invalid(format!(
                    "inconsistent threshold count: {} vs {thresholds}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(
                    "threshold probabilities must lie in [0, 1]".into(),
                ));
            }
            if t > thresholds {
                return Err(Error::Invalid(format!(
                    "target bin {t} out of range for {} bins",
                    thresholds + 1
                )));
            }
            rows.push(
                row.into_iter()
                    .map(|p| p.clamp(ORDINAL_EPS, 1.0 - ORDINAL_EPS))
                    .collect(),
            );
        }
        Ok(Self {
            target_bins,
            threshold_prob_rows: rows,
        })
    }

    pub fn target_bins(&self) -> &[usize] {
        &self.target_bins
    }

    pub fn threshold_prob_rows(&self) -> &[Vec<f64>] {
        &self.threshold_prob_rows
    }

    pub fn len(&self) -> usize {
        self.target_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_bins.is_empty()
    }
}

/// Distance applied to the Soft-Argmax bin estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceLoss {
    SmoothL1,
    Mse,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn smooth_l1(batch: &LossBatch) -> LossOutput {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let grad = batch
        .residuals()
        .map(|e| {
            if e.abs() <= 1.0 {
                total += 0.5 * e * e;
                e / n
            } else {
                total += e.abs() - 0.5;
                sign(e) / n
            }
        })
        .collect();
    LossOutput {
        value: total / n,
        grad,
    }
}

pub fn mse(batch: &LossBatch) -> LossOutput {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let grad = batch
        .residuals()
        .map(|e| {
            total += e * e;
            2.0 * e / n
        })
        .collect();
    LossOutput {
        value: total / n,
        grad,
    }
}

/// berHu value and gradient along with the threshold `c` it used.
#[derive(Debug, Clone, PartialEq)]
pub struct BerHuOutput {
    pub value: f64,
    pub grad: Vec<f64>,
    pub c: f64,
}

/// Reverse Huber loss with `c = max_i |y_i - ŷ_i| / 5` taken from the batch.
///
/// `c` is held constant in the gradient. All-zero residuals give `c = 0`,
/// zero loss and zero gradient.
pub fn berhu(batch: &LossBatch) -> BerHuOutput {
    let c = 0.2 * batch.residuals().fold(0.0f64, |m, e| m.max(e.abs()));
    if c == 0.0 {
        return BerHuOutput {
            value: 0.0,
            grad: vec![0.0; batch.len()],
            c,
        };
    }
    let out = berhu_with_c(batch, c);
    BerHuOutput {
        value: out.value,
        grad: out.grad,
        c,
    }
}

/// berHu with an externally fixed threshold `c > 0`.
pub fn berhu_with_c(batch: &LossBatch, c: f64) -> LossOutput {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let grad = batch
        .residuals()
        .map(|e| {
            if e.abs() <= c {
                total += e.abs();
                sign(e) / n
            } else {
                total += (e * e + c * c) / (2.0 * c);
                e / (n * c)
            }
        })
        .collect();
    LossOutput {
        value: total / n,
        grad,
    }
}

/// Mean softmax cross entropy over depth-bin logits.
pub fn cross_entropy(batch: &BinClassBatch) -> RowLossOutput {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let grad = batch
        .logit_rows
        .iter()
        .zip(&batch.target_bins)
        .map(|(row, &t)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += log_norm - row[t];
            let mut g = softmax(row, 1.0);
            g[t] -= 1.0;
            g.iter_mut().for_each(|v| *v /= n);
            g
        })
        .collect();
    RowLossOutput {
        value: total / n,
        grad,
    }
}

/// Distance loss between the Soft-Argmax bin estimate and the target bin index.
pub fn soft_argmax_loss(
    batch: &BinClassBatch,
    cfg: SoftArgmaxConfig,
    distance: DistanceLoss,
) -> RowLossOutput {
    let estimates: Vec<f64> = batch
        .logit_rows
        .iter()
        .map(|row| soft_argmax(row, cfg))
        .collect();
    let targets: Vec<f64> = batch.target_bins.iter().map(|&t| t as f64).collect();
    let inner = LossBatch {
        targets,
        predictions: estimates,
    };
    let outer = match distance {
        DistanceLoss::SmoothL1 => smooth_l1(&inner),
        DistanceLoss::Mse => mse(&inner),
    };
    let grad = batch
        .logit_rows
        .iter()
        .zip(&outer.grad)
        .map(|(row, &scale)| {
            soft_argmax_gradient(row, cfg)
                .into_iter()
                .map(|g| g * scale)
                .collect()
        })
        .collect();
    RowLossOutput {
        value: outer.value,
        grad,
    }
}

/// Ordinal regression loss over threshold probabilities `P_k = P(bin > k)`.
pub fn ordinal_loss(batch: &OrdinalBatch) -> RowLossOutput {
    let n = batch.len() as f64;
    let mut total = 0.0;
    let grad = batch
        .threshold_prob_rows
        .iter()
        .zip(&batch.target_bins)
        .map(|(row, &target)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    if k < target {
                        total -= p.ln();
                        -1.0 / (n * p)
                    } else {
                        total -= (1.0 - p).ln();
                        1.0 / (n * (1.0 - p))
                    }
                })
                .collect()
        })
        .collect();
    RowLossOutput {
        value: total / n,
        grad,
    }
}

/// Predicted bin from ordinal threshold probabilities: the number of `P_k >= 0.5`.
pub fn ordinal_decode(threshold_probs: &[f64]) -> usize {
    threshold_probs.iter().filter(|&&p| p >= 0.5).count()
}

/// Balancing weights of the detector and depth loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaskWeights {
    pub w_obj: f64,
    pub w_loc: f64,
    pub w_class: f64,
    pub w_de: f64,
}

impl Default for MultitaskWeights {
    /// Detector weights 1 / 5 / 1; depth weight 1.
    fn default() -> Self {
        Self {
            w_obj: 1.0,
            w_loc: 5.0,
            w_class: 1.0,
            w_de: 1.0,
        }
    }
}

impl MultitaskWeights {
    pub fn new(w_obj: f64, w_loc: f64, w_class: f64, w_de: f64) -> Result<Self> {
        if [w_obj, w_loc, w_class, w_de]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(
                "multitask weights must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            w_obj,
            w_loc,
            w_class,
            w_de,
        })
    }
}

/// Detector loss plus weighted depth loss.
pub fn combine_multitask(
    l_obj: f64,
    l_loc: f64,
    l_class: f64,
    l_de: f64,
    w: &MultitaskWeights,
) -> f64 {
    let detector = w.w_obj * l_obj + w.w_loc * l_loc + w.w_class * l_class;
    detector + w.w_de * l_de
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(y: &[f64], p: &[f64]) -> LossBatch {
        LossBatch::new(y.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&batch(&[0.0], &[0.5])).value, 0.125);
        assert_eq!(smooth_l1(&batch(&[0.0], &[2.0])).value, 1.5);
        let out = smooth_l1(&batch(&[0.0, 0.0], &[0.5, 2.0]));
        assert_eq!(out.value, 0.8125);
        assert_eq!(out.grad, vec![0.25, 0.5]);
    }

    #[test]
    fn mse_examples() {
        let out = mse(&batch(&[0.0], &[1.0]));
        assert_eq!((out.value, out.grad), (1.0, vec![2.0]));
        let out = mse(&batch(&[1.5, -2.0], &[1.5, -2.0]));
        assert_eq!((out.value, out.grad), (0.0, vec![0.0, 0.0]));
        assert_eq!(mse(&batch(&[1.0, 3.0], &[2.0, 1.0])).value, 2.5);
    }

    #[test]
    fn berhu_examples() {
        let out = berhu(&batch(&[0.0, 0.0], &[1.0, 1.0]));
        assert_eq!(out.c, 0.2);
        assert!((out.value - 2.6).abs() < 1e-12);
        let out = berhu(&batch(&[3.0, 4.0], &[3.0, 4.0]));
        assert_eq!((out.value, out.c), (0.0, 0.0));
        assert_eq!(out.grad, vec![0.0, 0.0]);
        let out = berhu(&batch(&[0.0, 0.0], &[0.1, 1.0]));
        assert_eq!(out.c, 0.2);
        assert!((out.value - 1.35).abs() < 1e-12);
        // L1 branch: sign/N, L2 branch: e/(N c)
        assert!((out.grad[0] - 0.5).abs() < 1e-12);
        assert!((out.grad[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let b = BinClassBatch::new(vec![0], vec![vec![0.0, 0.0]]).unwrap();
        assert!((cross_entropy(&b).value - std::f64::consts::LN_2).abs() < 1e-15);
        let mut row = vec![0.0; 7];
        row[4] = 100.0;
        let b = BinClassBatch::new(vec![4], vec![row]).unwrap();
        assert!(cross_entropy(&b).value < 1e-40);
    }

    #[test]
    fn soft_argmax_loss_examples() {
        let cfg = SoftArgmaxConfig::default();
        let b = BinClassBatch::new(vec![3, 3], vec![vec![0.2; 7], vec![-1.0; 7]]).unwrap();
        assert_eq!(soft_argmax_loss(&b, cfg, DistanceLoss::SmoothL1).value, 0.0);
        assert_eq!(soft_argmax_loss(&b, cfg, DistanceLoss::Mse).value, 0.0);
        let b = BinClassBatch::new(vec![0], vec![vec![0.7; 7]]).unwrap();
        for beta in [0.5, 3.0, 20.0] {
            let cfg = SoftArgmaxConfig::new(beta).unwrap();
            assert!((soft_argmax_loss(&b, cfg, DistanceLoss::Mse).value - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_soft_argmax_loss_vanishes() {
        let cfg = SoftArgmaxConfig::new(100.0).unwrap();
        let mut row = vec![0.0; 7];
        row[2] = 5.0;
        let b = BinClassBatch::new(vec![2], vec![row]).unwrap();
        for d in [DistanceLoss::SmoothL1, DistanceLoss::Mse] {
            assert!(soft_argmax_loss(&b, cfg, d).value < 1e-6);
        }
    }

    #[test]
    fn ordinal_examples() {
        let b = OrdinalBatch::new(vec![0], vec![vec![0.5]]).unwrap();
        assert!((ordinal_loss(&b).value - std::f64::consts::LN_2).abs() < 1e-15);
        let b = OrdinalBatch::new(vec![0], vec![vec![0.0; 6]]).unwrap();
        let v = ordinal_loss(&b).value;
        assert!(v >= 0.0 && v <= 6.0 * -(1.0 - ORDINAL_EPS).ln() + 1e-15);
        let b = OrdinalBatch::new(vec![6], vec![vec![1.0; 6]]).unwrap();
        assert!(ordinal_loss(&b).value < 1e-6);
    }

    #[test]
    fn ordinal_decode_examples() {
        assert_eq!(ordinal_decode(&[0.0; 6]), 0);
        assert_eq!(ordinal_decode(&[1.0; 6]), 6);
        assert_eq!(ordinal_decode(&[0.9, 0.8, 0.6, 0.4, 0.1, 0.0]), 3);
    }

    #[test]
    fn multitask_examples() {
        let w = MultitaskWeights::new(1.0, 5.0, 1.0, 2.0).unwrap();
        assert_eq!(combine_multitask(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        assert_eq!(combine_multitask(1.0, 1.0, 1.0, 1.0, &w), 9.0);
        let w0 = MultitaskWeights { w_de: 0.0, ..w };
        assert_eq!(combine_multitask(0.3, 0.2, 0.1, 50.0, &w0), 0.3 + 1.0 + 0.1);
        assert!(MultitaskWeights::new(1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn batch_validation() {
        assert!(LossBatch::new(vec![], vec![]).is_err());
        assert!(LossBatch::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(LossBatch::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(BinClassBatch::new(vec![7], vec![vec![0.0; 7]]).is_err());
        assert!(BinClassBatch::new(vec![0, 0], vec![vec![0.0; 7], vec![0.0; 6]]).is_err());
        assert!(OrdinalBatch::new(vec![0], vec![vec![1.2; 6]]).is_err());
        assert!(OrdinalBatch::new(vec![7], vec![vec![0.5; 6]]).is_err());
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0..5.0f64, n),
                prop::collection::vec(-5.0..5.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn regression_losses_nonnegative_and_symmetric((y, p) in arb_pair()) {
            let fwd = batch(&y, &p);
            let rev = batch(&p, &y);
            for (a, b) in [(smooth_l1(&fwd).value, smooth_l1(&rev).value), (mse(&fwd).value, mse(&rev).value)] {
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
            prop_assert!(berhu(&fwd).value >= 0.0);
            prop_assert_eq!(smooth_l1(&batch(&y, &y)).value, 0.0);
            prop_assert_eq!(berhu(&batch(&y, &y)).value, 0.0);
        }

        #[test]
        fn losses_permutation_invariant((y, p) in arb_pair(), rot in 0usize..8) {
            let n = y.len();
            let r = rot % n;
            let mut yr = y.clone();
            let mut pr = p.clone();
            yr.rotate_left(r);
            pr.rotate_left(r);
            let a = batch(&y, &p);
            let b = batch(&yr, &pr);
            prop_assert!((mse(&a).value - mse(&b).value).abs() < 1e-12);
            prop_assert!((smooth_l1(&a).value - smooth_l1(&b).value).abs() < 1e-12);
            prop_assert!((berhu(&a).value - berhu(&b).value).abs() < 1e-9);
        }
    }
}
