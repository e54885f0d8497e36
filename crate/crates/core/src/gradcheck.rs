//! Central finite-difference checks of every analytic gradient in the crate.
//!
//! The numeric side only ever calls the scalar value of a loss, never its
//! analytic gradient, so the two routes stay independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bins::{soft_argmax, soft_argmax_gradient, SoftArgmaxConfig};
use crate::losses::{
    berhu, berhu_with_c, cross_entropy, mse, ordinal_loss, smooth_l1, soft_argmax_loss,
    BinClassBatch, DistanceLoss, LossBatch, OrdinalBatch,
};
use crate::transfer::{TransferKind, TransferSpec};

/// Step, tolerance and kink exclusion for a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tolerance: f64,
    /// Gradients smaller than this are compared against it instead of their
    /// own magnitude, so rounding noise in near-zero entries is not amplified.
    pub magnitude_floor: f64,
    /// Inputs within this distance of a branch point are skipped.
    pub kink_margin: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tolerance: 1e-5,
            magnitude_floor: 1e-3,
            kink_margin: 1e-4,
        }
    }
}

impl GradCheckConfig {
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(self.magnitude_floor);
        (analytic - numeric).abs() / scale
    }
}

/// Outcome of checking one gradient over many random inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub inputs: usize,
    pub entries_checked: usize,
    pub entries_skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

struct Tally {
    name: String,
    cfg: GradCheckConfig,
    inputs: usize,
    checked: usize,
    skipped: usize,
    max_err: f64,
}

impl Tally {
    fn new(name: &str, cfg: GradCheckConfig) -> Self {
        Self {
            name: name.to_string(),
            cfg,
            inputs: 0,
            checked: 0,
            skipped: 0,
            max_err: 0.0,
        }
    }

    /// Compares `analytic` against finite differences of `value` at `x`,
    /// skipping coordinates where `near_kink(i)` holds.
    fn compare<F, K>(&mut self, x: &[f64], analytic: &[f64], value: F, near_kink: K)
    where
        F: Fn(&[f64]) -> f64,
        K: Fn(usize) -> bool,
    {
        self.inputs += 1;
        let numeric = central_difference(value, x, self.cfg.step);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            if near_kink(i) {
                self.skipped += 1;
                continue;
            }
            self.checked += 1;
            let err = self.cfg.relative_error(a, n);
            if err > self.max_err || err.is_nan() {
                self.max_err = if err.is_nan() { f64::INFINITY } else { err };
            }
        }
    }

    fn finish(self) -> GradCheckReport {
        GradCheckReport {
            passed: self.max_err <= self.cfg.rel_tolerance && self.checked > 0,
            name: self.name,
            inputs: self.inputs,
            entries_checked: self.checked,
            entries_skipped: self.skipped,
            max_rel_error: self.max_err,
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(|c| c.to_vec()).collect()
}

fn check_regression<L>(
    name: &str,
    rng: &mut ChaCha8Rng,
    trials: usize,
    cfg: GradCheckConfig,
    loss: L,
    kink_at: Option<f64>,
) -> GradCheckReport
where
    L: Fn(&LossBatch) -> (f64, Vec<f64>),
{
    let mut tally = Tally::new(name, cfg);
    for _ in 0..trials {
        let n = rng.random_range(1..=8);
        let y = random_vec(rng, n, -4.0, 4.0);
        let p = random_vec(rng, n, -4.0, 4.0);
        let (_, grad) = loss(&LossBatch::new(y.clone(), p.clone()).unwrap());
        let value = |q: &[f64]| loss(&LossBatch::new(y.clone(), q.to_vec()).unwrap()).0;
        let near = |i: usize| match kink_at {
            Some(k) => ((p[i] - y[i]).abs() - k).abs() < cfg.kink_margin,
            None => false,
        };
        tally.compare(&p, &grad, value, near);
    }
    tally.finish()
}

fn check_berhu(rng: &mut ChaCha8Rng, trials: usize, cfg: GradCheckConfig) -> GradCheckReport {
    let mut tally = Tally::new("berhu", cfg);
    for _ in 0..trials {
        let n = rng.random_range(1..=8);
        let y = random_vec(rng, n, -4.0, 4.0);
        let p = random_vec(rng, n, -4.0, 4.0);
        let out = berhu(&LossBatch::new(y.clone(), p.clone()).unwrap());
        let c = out.c;
        // c is a pseudo-constant: hold it fixed while differencing
        let value =
            |q: &[f64]| berhu_with_c(&LossBatch::new(y.clone(), q.to_vec()).unwrap(), c).value;
        let near = |i: usize| ((p[i] - y[i]).abs() - c).abs() < cfg.kink_margin;
        tally.compare(&p, &out.grad, value, near);
    }
    tally.finish()
}

fn random_class_batch(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f64>>, usize) {
    let n = rng.random_range(1..=6);
    let k = rng.random_range(2..=9);
    let targets = (0..n).map(|_| rng.random_range(0..k)).collect();
    let rows = (0..n).map(|_| random_vec(rng, k, -3.0, 3.0)).collect();
    (targets, rows, k)
}

fn check_cross_entropy(
    rng: &mut ChaCha8Rng,
    trials: usize,
    cfg: GradCheckConfig,
) -> GradCheckReport {
    let mut tally = Tally::new("cross_entropy", cfg);
    for _ in 0..trials {
        let (targets, rows, k) = random_class_batch(rng);
        let out = cross_entropy(&BinClassBatch::new(targets.clone(), rows.clone()).unwrap());
        let value = |q: &[f64]| {
            cross_entropy(&BinClassBatch::new(targets.clone(), unflatten(q, k)).unwrap()).value
        };
        tally.compare(&flatten(&rows), &flatten(&out.grad), value, |_| false);
    }
    tally.finish()
}

fn check_soft_argmax_loss(
    rng: &mut ChaCha8Rng,
    trials: usize,
    cfg: GradCheckConfig,
    distance: DistanceLoss,
) -> GradCheckReport {
    let name = match distance {
        DistanceLoss::SmoothL1 => "soft_argmax_loss/sl1",
        DistanceLoss::Mse => "soft_argmax_loss/mse",
    };
    let mut tally = Tally::new(name, cfg);
    for _ in 0..trials {
        let (targets, rows, k) = random_class_batch(rng);
        let sa = SoftArgmaxConfig::new(rng.random_range(0.5..5.0)).unwrap();
        let out = soft_argmax_loss(
            &BinClassBatch::new(targets.clone(), rows.clone()).unwrap(),
            sa,
            distance,
        );
        let value = |q: &[f64]| {
            soft_argmax_loss(
                &BinClassBatch::new(targets.clone(), unflatten(q, k)).unwrap(),
                sa,
                distance,
            )
            .value
        };
        // the SL1 kink sits where |soft index - target| = 1, per row
        let residual_kink: Vec<bool> = rows
            .iter()
            .zip(&targets)
            .map(|(row, &t)| {
                distance == DistanceLoss::SmoothL1
                    && ((soft_argmax(row, sa) - t as f64).abs() - 1.0).abs() < cfg.kink_margin
            })
            .collect();
        tally.compare(&flatten(&rows), &flatten(&out.grad), value, |i| {
            residual_kink[i / k]
        });
    }
    tally.finish()
}

fn check_ordinal(rng: &mut ChaCha8Rng, trials: usize, cfg: GradCheckConfig) -> GradCheckReport {
    let mut tally = Tally::new("ordinal_loss", cfg);
    for _ in 0..trials {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(2..=9);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(rng, k - 1, 0.02, 0.98)).collect();
        let out = ordinal_loss(&OrdinalBatch::new(targets.clone(), rows.clone()).unwrap());
        let value = |q: &[f64]| {
            ordinal_loss(&OrdinalBatch::new(targets.clone(), unflatten(q, k - 1)).unwrap()).value
        };
        tally.compare(&flatten(&rows), &flatten(&out.grad), value, |_| false);
    }
    tally.finish()
}

fn check_soft_argmax(rng: &mut ChaCha8Rng, trials: usize, cfg: GradCheckConfig) -> GradCheckReport {
    let mut tally = Tally::new("soft_argmax", cfg);
    for _ in 0..trials {
        let k = rng.random_range(2..=9);
        let logits = random_vec(rng, k, -3.0, 3.0);
        let sa = SoftArgmaxConfig::new(rng.random_range(0.5..5.0)).unwrap();
        let grad = soft_argmax_gradient(&logits, sa);
        tally.compare(&logits, &grad, |q| soft_argmax(q, sa), |_| false);
    }
    tally.finish()
}

fn check_decode(
    rng: &mut ChaCha8Rng,
    trials: usize,
    cfg: GradCheckConfig,
    kind: TransferKind,
) -> GradCheckReport {
    let spec = TransferSpec::with_defaults(kind);
    let (lo, hi) = match kind {
        TransferKind::Inverse => (0.05, 2.0),
        TransferKind::Log => (-3.0, 6.0),
        TransferKind::Sigmoid => (-8.0, 8.0),
        TransferKind::Direct | TransferKind::ReluLike => (-10.0, 10.0),
    };
    let kink = (spec.d_min - spec.b) / spec.a;
    let mut tally = Tally::new(&format!("decode/{kind}"), cfg);
    for _ in 0..trials {
        let y = rng.random_range(lo..hi);
        let grad = [spec.decode_gradient(y)];
        let near = |_: usize| kind == TransferKind::ReluLike && (y - kink).abs() < cfg.kink_margin;
        tally.compare(&[y], &grad, |q| spec.decode(q[0]).unwrap(), near);
    }
    tally.finish()
}

/// Runs every gradient check with `trials` random inputs each.
pub fn run_suite(seed: u64, trials: usize, cfg: GradCheckConfig) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = vec![
        check_regression(
            "smooth_l1",
            &mut rng,
            trials,
            cfg,
            |b| {
                let o = smooth_l1(b);
                (o.value, o.grad)
            },
            Some(1.0),
        ),
        check_regression(
            "mse",
            &mut rng,
            trials,
            cfg,
            |b| {
                let o = mse(b);
                (o.value, o.grad)
            },
            None,
        ),
        check_berhu(&mut rng, trials, cfg),
        check_cross_entropy(&mut rng, trials, cfg),
        check_soft_argmax_loss(&mut rng, trials, cfg, DistanceLoss::SmoothL1),
        check_soft_argmax_loss(&mut rng, trials, cfg, DistanceLoss::Mse),
        check_ordinal(&mut rng, trials, cfg),
        check_soft_argmax(&mut rng, trials, cfg),
    ];
    for kind in TransferKind::ALL {
        reports.push(check_decode(&mut rng, trials, cfg, kind));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-6);
        assert!((g[0] - 12.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn suite_passes_with_default_tolerances() {
        let reports = run_suite(7, 100, GradCheckConfig::default());
        assert_eq!(reports.len(), 13);
        for r in &reports {
            assert!(r.passed, "{r:?}");
            assert_eq!(r.inputs, 100);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let cfg = GradCheckConfig::default();
        let mut tally = Tally::new("broken", cfg);
        // d/dx x^2 is 2x, not x
        tally.compare(&[1.5], &[1.5], |x| x[0] * x[0], |_| false);
        assert!(!tally.finish().passed);
    }
}
