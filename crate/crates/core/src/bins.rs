//! Uniform depth discretization, Soft-Argmax and sub-bin refinement.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k` uniform bins over `[d_min, d_max]`.
///
/// Bins are half-open `[lo, hi)` except the last, which also contains `d_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBinSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub k: usize,
}

impl Default for DepthBinSpec {
    /// 7 bins of 100 m over 0..700 m.
    fn default() -> Self {
        Self {
            d_min: 0.0,
            d_max: 700.0,
            k: 7,
        }
    }
}

impl DepthBinSpec {
    pub fn new(d_min: f64, d_max: f64, k: usize) -> Result<Self> {
        let spec = Self { d_min, d_max, k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min.is_finite() && self.d_max.is_finite()) {
            return Err(Error::Config("bin bounds must be finite".into()));
        }
        if self.d_max <= self.d_min {
            return Err(Error::Config(format!(
                "d_max = {} must exceed d_min = {}",
                self.d_max, self.d_min
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!(
                "need at least 2 depth bins, got {}",
                self.k
            )));
        }
        Ok(())
    }

    /// Uniform bin width `s`.
    pub fn bin_width(&self) -> f64 {
        (self.d_max - self.d_min) / self.k as f64
    }

    pub fn contains(&self, d: f64) -> bool {
        self.d_min <= d && d <= self.d_max
    }

    pub fn bin_index(&self, d: f64) -> Result<usize> {
        if !self.contains(d) {
            return Err(Error::Domain(format!(
                "depth {d} outside [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        let raw = ((d - self.d_min) / self.bin_width()).floor() as usize;
        Ok(raw.min(self.k - 1))
    }

    /// Bin of `d` after clamping it into `[d_min, d_max]`. Used when decoding
    /// regression outputs, which may leave the discretized range.
    pub fn bin_index_clamped(&self, d: f64) -> usize {
        let d = if d.is_nan() {
            self.d_min
        } else {
            d.clamp(self.d_min, self.d_max)
        };
        self.bin_index(d).unwrap_or(0)
    }

    pub fn bin_center(&self, i: usize) -> Result<f64> {
        if i >= self.k {
            return Err(Error::Index {
                index: i,
                len: self.k,
            });
        }
        Ok(self.d_min + (i as f64 + 0.5) * self.bin_width())
    }

    /// Lower edge of bin `i` (`i == k` yields `d_max`).
    pub fn bin_edge(&self, i: usize) -> f64 {
        if i >= self.k {
            self.d_max
        } else {
            self.d_min + i as f64 * self.bin_width()
        }
    }
}

/// Sharpness of the Soft-Argmax softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftArgmaxConfig {
    pub beta: f64,
}

impl Default for SoftArgmaxConfig {
    fn default() -> Self {
        Self { beta: 3.0 }
    }
}

impl SoftArgmaxConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Config(format!(
                "beta = {beta} must be a positive real"
            )));
        }
        Ok(Self { beta })
    }
}

/// `softmax(beta * logits)` with max subtraction.
pub fn softmax(logits: &[f64], beta: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(beta * v));
    let mut out: Vec<f64> = logits.iter().map(|&v| (beta * v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Unnormalized weights `exp(beta * logit - max)` and their expected index.
/// Dividing once at the end keeps uniform logits at exactly `(K - 1) / 2`.
fn expected_index(logits: &[f64], beta: f64) -> (Vec<f64>, f64, f64) {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(beta * v));
    let w: Vec<f64> = logits.iter().map(|&v| (beta * v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let weighted: f64 = w.iter().enumerate().map(|(i, &wi)| i as f64 * wi).sum();
    let mean = (weighted / total).clamp(0.0, (logits.len().max(1) - 1) as f64);
    (w, total, mean)
}

/// Expected bin index under `softmax(beta * logits)`, in `[0, K - 1]`.
pub fn soft_argmax(logits: &[f64], cfg: SoftArgmaxConfig) -> f64 {
    expected_index(logits, cfg.beta).2
}

/// Gradient of [`soft_argmax`] with respect to the logits:
/// `beta * p_j * (j - soft_argmax)`.
pub fn soft_argmax_gradient(logits: &[f64], cfg: SoftArgmaxConfig) -> Vec<f64> {
    let (w, total, mean) = expected_index(logits, cfg.beta);
    w.iter()
        .enumerate()
        .map(|(j, &wj)| cfg.beta * (wj / total) * (j as f64 - mean))
        .collect()
}

/// Sub-bin refinement function family.
///
/// `None` disables refinement and behaves as the constant `f = 1`, which
/// produces a zero shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationKind {
    None,
    Equiangular,
    Parabola,
    SinFit,
    MaxFit,
    SinAtanFit,
}

impl InterpolationKind {
    /// The five refinement functions, excluding `None`.
    pub const FUNCTIONS: [InterpolationKind; 5] = [
        InterpolationKind::Equiangular,
        InterpolationKind::Parabola,
        InterpolationKind::SinFit,
        InterpolationKind::MaxFit,
        InterpolationKind::SinAtanFit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InterpolationKind::None => "none",
            InterpolationKind::Equiangular => "equiangular",
            InterpolationKind::Parabola => "parabola",
            InterpolationKind::SinFit => "sinfit",
            InterpolationKind::MaxFit => "maxfit",
            InterpolationKind::SinAtanFit => "sinatanfit",
        }
    }
}

impl fmt::Display for InterpolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterpolationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(InterpolationKind::None),
            "equiangular" => Ok(InterpolationKind::Equiangular),
            "parabola" => Ok(InterpolationKind::Parabola),
            "sinfit" => Ok(InterpolationKind::SinFit),
            "maxfit" => Ok(InterpolationKind::MaxFit),
            "sinatanfit" => Ok(InterpolationKind::SinAtanFit),
            other => Err(Error::Config(format!(
                "unknown interpolation '{other}' (expected none|equiangular|parabola|sinfit|maxfit|sinatanfit)"
            ))),
        }
    }
}

/// Evaluates the refinement function `f(x)` on `[0, 1]`.
pub fn interpolation_f(kind: InterpolationKind, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "interpolation argument {x} outside [0, 1]"
        )));
    }
    Ok(match kind {
        InterpolationKind::None => 1.0,
        InterpolationKind::Equiangular => x,
        InterpolationKind::Parabola => 2.0 * x / (x + 1.0),
        InterpolationKind::SinFit => (FRAC_PI_2 * (x - 1.0)).sin() + 1.0,
        InterpolationKind::MaxFit => (0.5 * (x.powi(4) + x)).max(1.0 - (FRAC_PI_2 * x).cos()),
        // not monotone near 1: peaks at x = tan(1) * 2 / pi ~ 0.9915, f(1) ~ 0.99998
        InterpolationKind::SinAtanFit => (FRAC_PI_2 * (FRAC_PI_2 * x).atan()).sin(),
    })
}

fn check_distribution(spec: &DepthBinSpec, probs: &[f64]) -> Result<()> {
    if probs.len() != spec.k {
        return Err(Error::InvalidDistribution(format!(
            "expected {} probabilities, got {}",
            spec.k,
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidDistribution(
            "probabilities must be finite and >= 0".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Refines the argmax bin center toward the more probable neighbor.
///
/// Neighbors outside the bin range count as probability 0. The estimate
/// moves by at most half a bin and never leaves the argmax bin.
pub fn refine_depth(spec: &DepthBinSpec, probs: &[f64], kind: InterpolationKind) -> Result<f64> {
    check_distribution(spec, probs)?;
    let i = argmax(probs);
    let center = spec.bin_center(i)?;
    if kind == InterpolationKind::None {
        return Ok(center);
    }
    let half = spec.bin_width() / 2.0;
    let p = probs[i];
    let prev = if i > 0 { probs[i - 1] } else { 0.0 };
    let next = probs.get(i + 1).copied().unwrap_or(0.0);

    if prev > next {
        let x = bounded_ratio(p - prev, p - next);
        Ok(center - half * (1.0 - interpolation_f(kind, x)?))
    } else {
        let inv_x = bounded_ratio(p - next, p - prev);
        Ok(center + half * (1.0 - interpolation_f(kind, inv_x)?))
    }
}

/// `num / den` clamped into `[0, 1]`, with `x / 0 := 1`.
fn bounded_ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_bins() -> DepthBinSpec {
        DepthBinSpec::default()
    }

    #[test]
    fn bin_index_examples() {
        let s = default_bins();
        assert_eq!(s.bin_index(0.0).unwrap(), 0);
        assert_eq!(s.bin_index(700.0).unwrap(), 6);
        assert_eq!(s.bin_index(350.0).unwrap(), 3);
        assert_eq!(s.bin_index(300.0).unwrap(), 3);
        assert_eq!(s.bin_index(299.999).unwrap(), 2);
        assert!(matches!(s.bin_index(-0.1), Err(Error::Domain(_))));
        assert!(matches!(s.bin_index(700.1), Err(Error::Domain(_))));
    }

    #[test]
    fn bin_center_examples() {
        let s = default_bins();
        assert_eq!(s.bin_center(0).unwrap(), 50.0);
        assert_eq!(s.bin_center(6).unwrap(), 650.0);
        assert_eq!(s.bin_center(3).unwrap(), 350.0);
        assert!(matches!(
            s.bin_center(7),
            Err(Error::Index { index: 7, len: 7 })
        ));
    }

    #[test]
    fn rejects_bad_bin_specs() {
        assert!(DepthBinSpec::new(0.0, 700.0, 1).is_err());
        assert!(DepthBinSpec::new(10.0, 10.0, 7).is_err());
        assert!(SoftArgmaxConfig::new(0.0).is_err());
    }

    #[test]
    fn soft_argmax_examples() {
        let cfg = SoftArgmaxConfig::new(3.0).unwrap();
        assert_eq!(soft_argmax(&[0.4; 7], cfg), 3.0);
        for k in 2..=64 {
            assert_eq!(soft_argmax(&vec![-2.5; k], cfg), (k - 1) as f64 / 2.0);
        }
        let mut one_hot = vec![0.0; 7];
        one_hot[5] = 10.0;
        assert!((soft_argmax(&one_hot, cfg) - 5.0).abs() < 1e-9);
        assert_eq!(soft_argmax(&[0.0, 0.0], cfg), 0.5);
    }

    #[test]
    fn soft_argmax_gradient_examples() {
        let cfg = SoftArgmaxConfig::new(3.0).unwrap();
        let g = soft_argmax_gradient(&[0.0, 0.0], cfg);
        assert!((g[0] + 0.75).abs() < 1e-15 && (g[1] - 0.75).abs() < 1e-15);
        let g = soft_argmax_gradient(&[1.3; 7], cfg);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn soft_argmax_survives_large_logits() {
        let cfg = SoftArgmaxConfig::new(100.0).unwrap();
        let v = soft_argmax(&[1000.0, 999.0, 0.0], cfg);
        assert!(v.is_finite() && v.abs() < 1e-6);
    }

    #[test]
    fn interpolation_values() {
        for kind in InterpolationKind::FUNCTIONS {
            assert_eq!(interpolation_f(kind, 0.0).unwrap(), 0.0, "{kind}");
        }
        assert_eq!(
            interpolation_f(InterpolationKind::Equiangular, 0.5).unwrap(),
            0.5
        );
        let sin_fit = interpolation_f(InterpolationKind::SinFit, 0.5).unwrap();
        assert!((sin_fit - (1.0 - std::f64::consts::FRAC_PI_4.sin())).abs() < 1e-15);
        assert!((sin_fit - 0.29289).abs() < 1e-5);
        assert_eq!(
            interpolation_f(InterpolationKind::Parabola, 1.0).unwrap(),
            1.0
        );
        assert!(interpolation_f(InterpolationKind::Parabola, 1.01).is_err());
        assert!(interpolation_f(InterpolationKind::Parabola, -0.01).is_err());
        assert!(interpolation_f(InterpolationKind::Parabola, f64::NAN).is_err());
    }

    #[test]
    fn refine_symmetric_neighbors_stay_at_center() {
        let s = default_bins();
        let probs = [0.0, 0.1, 0.2, 0.4, 0.2, 0.1, 0.0];
        for kind in [
            InterpolationKind::None,
            InterpolationKind::Equiangular,
            InterpolationKind::Parabola,
            InterpolationKind::SinFit,
            InterpolationKind::MaxFit,
        ] {
            assert!(
                (refine_depth(&s, &probs, kind).unwrap() - 350.0).abs() < 1e-12,
                "{kind}"
            );
        }
    }

    #[test]
    fn refine_tie_breaks_low_and_shifts_toward_heavier_neighbor() {
        // p_1 = p_2 = 0.5: argmax resolves to bin 1 (center 150). Its upper
        // neighbor carries 0.5 and its lower neighbor 0, so the ratio used is 0
        // and the estimate moves half a bin up, onto the shared edge.
        let s = default_bins();
        let probs = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0];
        for kind in InterpolationKind::FUNCTIONS {
            assert_eq!(refine_depth(&s, &probs, kind).unwrap(), 200.0, "{kind}");
        }
    }

    #[test]
    fn refine_x_zero_shifts_half_a_bin_down() {
        let s = default_bins();
        // i = 2, p_1 = p_2 would tie low, so use p_1 just below p_2
        let probs = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0];
        let mut shifted = probs;
        shifted[1] = 0.5 - 1e-9;
        shifted[2] = 0.5 + 1e-9;
        for kind in InterpolationKind::FUNCTIONS {
            let d = refine_depth(&s, &shifted, kind).unwrap();
            assert!((d - 200.0).abs() < 1e-4, "{kind}: {d}");
        }
    }

    #[test]
    fn refine_none_returns_center() {
        let s = default_bins();
        let probs = [0.05, 0.05, 0.1, 0.2, 0.4, 0.15, 0.05];
        assert_eq!(
            refine_depth(&s, &probs, InterpolationKind::None).unwrap(),
            450.0
        );
    }

    #[test]
    fn refine_edge_bins_use_zero_outside() {
        let s = default_bins();
        // argmax 0 with a heavier upper neighbor moves up
        let d = refine_depth(
            &s,
            &[0.6, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0],
            InterpolationKind::Equiangular,
        )
        .unwrap();
        // inv_x = (0.6 - 0.3) / (0.6 - 0) = 0.5 -> +25
        assert!((d - 75.0).abs() < 1e-12);
        let d = refine_depth(
            &s,
            &[0.0, 0.0, 0.0, 0.0, 0.1, 0.3, 0.6],
            InterpolationKind::Equiangular,
        )
        .unwrap();
        // x = (0.6 - 0.3) / 0.6 = 0.5 -> -25
        assert!((d - 625.0).abs() < 1e-12);
    }

    #[test]
    fn refine_rejects_bad_distributions() {
        let s = default_bins();
        assert!(matches!(
            refine_depth(&s, &[0.5, 0.5], InterpolationKind::Equiangular),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            refine_depth(&s, &[0.2; 7], InterpolationKind::Equiangular),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            refine_depth(
                &s,
                &[-0.1, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2],
                InterpolationKind::Equiangular
            ),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn names_round_trip() {
        for kind in InterpolationKind::FUNCTIONS
            .iter()
            .chain([InterpolationKind::None].iter())
        {
            assert_eq!(kind.name().parse::<InterpolationKind>().unwrap(), *kind);
        }
        assert!("cubic".parse::<InterpolationKind>().is_err());
    }

    fn arb_probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, k).prop_filter_map("nonzero mass", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-3).then(|| raw.iter().map(|v| v / total).collect())
        })
    }

    proptest! {
        #[test]
        fn center_maps_back_to_its_bin(k in 2usize..40, d_min in 0.0..100.0f64, width in 1.0..1000.0f64) {
            let s = DepthBinSpec::new(d_min, d_min + width, k).unwrap();
            for i in 0..k {
                prop_assert_eq!(s.bin_index(s.bin_center(i).unwrap()).unwrap(), i);
            }
        }

        #[test]
        fn soft_argmax_in_range_and_shift_invariant(
            logits in prop::collection::vec(-5.0..5.0f64, 2..12),
            shift in -50.0..50.0f64,
            beta in 0.1..10.0f64,
        ) {
            let cfg = SoftArgmaxConfig::new(beta).unwrap();
            let v = soft_argmax(&logits, cfg);
            prop_assert!(v >= 0.0 && v <= (logits.len() - 1) as f64);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            prop_assert!((soft_argmax(&shifted, cfg) - v).abs() < 1e-9);
        }

        #[test]
        fn refinement_stays_inside_argmax_bin(probs in arb_probs(7), kind_ix in 0usize..6) {
            let kinds = [
                InterpolationKind::None,
                InterpolationKind::Equiangular,
                InterpolationKind::Parabola,
                InterpolationKind::SinFit,
                InterpolationKind::MaxFit,
                InterpolationKind::SinAtanFit,
            ];
            let s = default_bins();
            let d = refine_depth(&s, &probs, kinds[kind_ix]).unwrap();
            let i = argmax(&probs);
            let c = s.bin_center(i).unwrap();
            prop_assert!((d - c).abs() <= s.bin_width() / 2.0 + 1e-9);
            prop_assert!(d >= s.bin_edge(i) - 1e-9 && d <= s.bin_edge(i + 1) + 1e-9);
            let prev = if i > 0 { probs[i - 1] } else { 0.0 };
            let next = probs.get(i + 1).copied().unwrap_or(0.0);
            if prev > next {
                prop_assert!(d <= c + 1e-12);
            } else if prev < next {
                prop_assert!(d >= c - 1e-12);
            }
        }
    }
}
