//! Synthetic ground truth and noisy detectors.
//!
//! Every draw comes from a `ChaCha8Rng` seeded with the config's 64-bit seed,
//! so a config always produces the same data.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::bins::DepthBinSpec;
use crate::error::{Error, Result};
use crate::transfer::sigmoid;
use crate::types::{iou, BoundingBox, DepthPrediction, Detection, GroundTruthObject};

/// Maps the IoU of a detection with its source object to a confidence:
/// `1 - (1 - floor) * (1 - iou)` plus Gaussian noise, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceModel {
    pub floor: f64,
    pub noise_std: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            floor: 0.3,
            noise_std: 0.0,
        }
    }
}

/// Depth payload the synthetic detector emits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthPrediction {
    Continuous,
    /// Logits whose `softmax(beta * logits)` is a Gaussian of width
    /// `softness_m` around the predicted depth, evaluated at bin centers.
    Binned {
        softness_m: f64,
        beta: f64,
    },
    /// Threshold probabilities `sigmoid((d - edge_k) / softness_m)`.
    Ordinal {
        softness_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    /// Inclusive range of objects per frame.
    pub objects_per_frame: (usize, usize),
    /// Image `(width, height)` in pixels.
    pub image_size: (f64, f64),
    /// Inclusive range of object side lengths in pixels.
    pub object_size_px: (f64, f64),
    pub depth_range: (f64, f64),
    pub class_set: Vec<String>,
    /// Fraction of objects whose depth is left unannotated.
    pub unannotated_rate: f64,
    pub fn_rate: f64,
    pub fp_rate_per_frame: f64,
    /// Standard deviation of the per-corner box noise.
    pub box_jitter_px: f64,
    pub depth_noise_m: f64,
    /// Probability that a detection's depth is moved into a different bin.
    pub bin_corruption_rate: f64,
    pub confidence: ConfidenceModel,
    pub prediction: SynthPrediction,
    pub bins: DepthBinSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 100,
            objects_per_frame: (1, 5),
            image_size: (2448.0, 2048.0),
            object_size_px: (10.0, 100.0),
            depth_range: (0.0, 700.0),
            class_set: vec![
                "airplane".into(),
                "helicopter".into(),
                "bird".into(),
                "drone".into(),
            ],
            unannotated_rate: 0.0,
            fn_rate: 0.0,
            fp_rate_per_frame: 0.0,
            box_jitter_px: 0.0,
            depth_noise_m: 0.0,
            bin_corruption_rate: 0.0,
            confidence: ConfidenceModel::default(),
            prediction: SynthPrediction::Continuous,
            bins: DepthBinSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        self.bins.validate()?;
        for (name, rate) in [
            ("fn_rate", self.fn_rate),
            ("unannotated_rate", self.unannotated_rate),
            ("bin_corruption_rate", self.bin_corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return err(format!("{name} = {rate} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("fp_rate_per_frame", self.fp_rate_per_frame),
            ("box_jitter_px", self.box_jitter_px),
            ("depth_noise_m", self.depth_noise_m),
            ("confidence.noise_std", self.confidence.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence.floor) {
            return err("confidence.floor must lie in [0, 1]".into());
        }
        let (lo, hi) = self.objects_per_frame;
        if lo > hi {
            return err(format!("objects_per_frame range ({lo}, {hi}) is empty"));
        }
        let (w, h) = self.image_size;
        let (smin, smax) = self.object_size_px;
        if !(w > 0.0 && h > 0.0) {
            return err("image_size must be positive".into());
        }
        if !(smin >= 1.0 && smin <= smax && smax <= w.min(h)) {
            return err(format!(
                "object_size_px ({smin}, {smax}) must satisfy 1 <= min <= max <= image side"
            ));
        }
        let (dlo, dhi) = self.depth_range;
        if !(dlo < dhi && self.bins.contains(dlo) && self.bins.contains(dhi)) {
            return err(format!(
                "depth_range ({dlo}, {dhi}) must be increasing and inside [{}, {}]",
                self.bins.d_min, self.bins.d_max
            ));
        }
        if self.class_set.is_empty() {
            return err("class_set must not be empty".into());
        }
        match self.prediction {
            SynthPrediction::Continuous => {}
            SynthPrediction::Binned { softness_m, beta } => {
                if !(softness_m > 0.0 && beta > 0.0) {
                    return err("binned softness_m and beta must be > 0".into());
                }
            }
            SynthPrediction::Ordinal { softness_m } => {
                if softness_m <= 0.0 {
                    return err("ordinal softness_m must be > 0".into());
                }
            }
        }
        Ok(())
    }
}

/// Generated ground truth and detections.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub ground_truth: Vec<GroundTruthObject>,
    pub detections: Vec<Detection>,
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}")
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("std validated").sample(rng)
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> BoundingBox {
    let (w_img, h_img) = cfg.image_size;
    let (smin, smax) = cfg.object_size_px;
    let w = rng.random_range(smin..=smax);
    let h = rng.random_range(smin..=smax);
    let x = rng.random_range(0.0..=(w_img - w));
    let y = rng.random_range(0.0..=(h_img - h));
    BoundingBox::new(x, y, x + w, y + h).expect("positive size")
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BoundingBox, cfg: &SynthConfig) -> Option<BoundingBox> {
    if cfg.box_jitter_px == 0.0 {
        return Some(*b);
    }
    let (w_img, h_img) = cfg.image_size;
    let s = cfg.box_jitter_px;
    let x0 = (b.x_min() + gaussian(rng, s)).clamp(0.0, w_img);
    let y0 = (b.y_min() + gaussian(rng, s)).clamp(0.0, h_img);
    let x1 = (b.x_max() + gaussian(rng, s)).clamp(0.0, w_img);
    let y1 = (b.y_max() + gaussian(rng, s)).clamp(0.0, h_img);
    let candidate = BoundingBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)).ok()?;
    (candidate.area() >= 1.0).then_some(candidate)
}

fn perturb_depth(rng: &mut ChaCha8Rng, depth: f64, cfg: &SynthConfig) -> f64 {
    let bins = &cfg.bins;
    let mut d = (depth + gaussian(rng, cfg.depth_noise_m)).clamp(bins.d_min, bins.d_max);
    if cfg.bin_corruption_rate > 0.0 && rng.random_bool(cfg.bin_corruption_rate) {
        let current = bins.bin_index(d).expect("clamped");
        let mut other = rng.random_range(0..bins.k - 1);
        if other >= current {
            other += 1;
        }
        let offset = d - bins.bin_edge(current);
        d = (bins.bin_edge(other) + offset).clamp(bins.bin_edge(other), bins.bin_edge(other + 1));
        // keep the corrupted depth inside the chosen bin's half-open interval
        if other + 1 < bins.k && bins.bin_index(d).expect("in range") != other {
            d = bins.bin_center(other).expect("in range");
        }
    }
    d
}

fn depth_payload(d: f64, cfg: &SynthConfig) -> DepthPrediction {
    let bins = &cfg.bins;
    match cfg.prediction {
        SynthPrediction::Continuous => DepthPrediction::Continuous(d),
        SynthPrediction::Binned { softness_m, beta } => DepthPrediction::Binned(
            (0..bins.k)
                .map(|i| {
                    let c = bins.bin_center(i).expect("in range");
                    -((c - d) / softness_m).powi(2) / (2.0 * beta)
                })
                .collect(),
        ),
        SynthPrediction::Ordinal { softness_m } => DepthPrediction::OrdinalBinned(
            (1..bins.k)
                .map(|i| sigmoid((d - bins.bin_edge(i)) / softness_m))
                .collect(),
        ),
    }
}

fn confidence(rng: &mut ChaCha8Rng, overlap: f64, cfg: &SynthConfig) -> f64 {
    let m = cfg.confidence;
    (1.0 - (1.0 - m.floor) * (1.0 - overlap) + gaussian(rng, m.noise_std)).clamp(0.0, 1.0)
}

/// Generates a ground-truth set and a detector's output on it.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ground_truth = Vec::new();
    let mut detections = Vec::new();
    let fp_count = (cfg.fp_rate_per_frame > 0.0)
        .then(|| Poisson::new(cfg.fp_rate_per_frame).expect("rate validated"));

    for f in 0..cfg.n_frames {
        let frame = frame_name(f);
        let n = rng.random_range(cfg.objects_per_frame.0..=cfg.objects_per_frame.1);
        for _ in 0..n {
            let bbox = random_box(&mut rng, cfg);
            let class = cfg.class_set.choose(&mut rng).expect("non-empty").clone();
            let depth = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
            let annotated = !(cfg.unannotated_rate > 0.0 && rng.random_bool(cfg.unannotated_rate));
            ground_truth.push(GroundTruthObject {
                frame_id: frame.clone(),
                bbox,
                class_label: class.clone(),
                depth_m: annotated.then_some(depth),
            });

            if cfg.fn_rate > 0.0 && rng.random_bool(cfg.fn_rate) {
                continue;
            }
            let Some(det_box) = jitter_box(&mut rng, &bbox, cfg) else {
                continue;
            };
            let conf = confidence(&mut rng, iou(&bbox, &det_box), cfg);
            let d = perturb_depth(&mut rng, depth, cfg);
            detections.push(Detection {
                frame_id: frame.clone(),
                bbox: det_box,
                class_label: class,
                confidence: conf,
                depth: depth_payload(d, cfg),
            });
        }

        if let Some(poisson) = &fp_count {
            let extra = poisson.sample(&mut rng) as usize;
            for _ in 0..extra {
                let bbox = random_box(&mut rng, cfg);
                let class = cfg.class_set.choose(&mut rng).expect("non-empty").clone();
                let u: f64 = rng.random();
                let d = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
                detections.push(Detection {
                    frame_id: frame.clone(),
                    bbox,
                    class_label: class,
                    confidence: u * u,
                    depth: depth_payload(d, cfg),
                });
            }
        }
    }
    Ok(SynthData {
        ground_truth,
        detections,
    })
}
