//! Geometric and annotation types shared by every other module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous pixel coordinates, corner format.
///
/// Area is `(x_max - x_min) * (y_max - y_min)`, without any `+1` pixel
/// convention. Boxes with zero or negative extent are rejected by [`BoundingBox::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBox(format!(
                "zero or negative extent in [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Returns the box shifted by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Intersection-over-union with `other`.
    pub fn iou(&self, other: &Self) -> f64 {
        iou(self, other)
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Annotated object. `depth_m` is `None` for objects whose distance is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub class_label: String,
    pub depth_m: Option<f64>,
}

impl GroundTruthObject {
    pub fn new(
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        class_label: impl Into<String>,
        depth_m: Option<f64>,
    ) -> Result<Self> {
        if let Some(d) = depth_m {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Invalid(format!(
                    "ground-truth depth {d} must be finite and >= 0"
                )));
            }
        }
        Ok(Self {
            frame_id: frame_id.into(),
            bbox,
            class_label: class_label.into(),
            depth_m,
        })
    }
}

/// Depth output attached to a detection.
#[derive(Debug, Clone, PartialEq)]
pub enum DepthPrediction {
    /// Regressed depth, already decoded to meters.
    Continuous(f64),
    /// Raw per-bin scores, one per depth bin.
    Binned(Vec<f64>),
    /// Ordinal threshold probabilities `P(bin > k)`, `K - 1` entries.
    OrdinalBinned(Vec<f64>),
}

impl DepthPrediction {
    /// Checks the payload against a bin count `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            DepthPrediction::Continuous(v) => {
                if !v.is_finite() {
                    return Err(Error::Invalid(format!("depth {v} is not finite")));
                }
            }
            DepthPrediction::Binned(logits) => {
                if logits.len() != k {
                    return Err(Error::Invalid(format!(
                        "expected {k} depth logits, got {}",
                        logits.len()
                    )));
                }
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("non-finite depth logit".into()));
                }
            }
            DepthPrediction::OrdinalBinned(probs) => {
                if probs.len() + 1 != k {
                    return Err(Error::Invalid(format!(
                        "expected {} threshold probabilities, got {}",
                        k - 1,
                        probs.len()
                    )));
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Invalid(
                        "threshold probability outside [0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A detector output for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub class_label: String,
    pub confidence: f64,
    pub depth: DepthPrediction,
}

impl Detection {
    pub fn new(
        frame_id: impl Into<String>,
        bbox: BoundingBox,
        class_label: impl Into<String>,
        confidence: f64,
        depth: DepthPrediction,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            frame_id: frame_id.into(),
            bbox,
            class_label: class_label.into(),
            confidence,
            depth,
        })
    }
}
