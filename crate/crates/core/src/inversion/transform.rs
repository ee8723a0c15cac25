use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ImageGrid;

/// Tolerance, in pixels, for a source coordinate to count as inside the frame.
const FRAME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Shift right by `t` pixels.
    TranslateX,
    /// Shift down by `t` pixels.
    TranslateY,
    /// Zoom by `2^t` about the image centre.
    Scale,
    /// Counter-clockwise rotation by `t` radians about the image centre.
    Rotate,
    /// Add `t` to every pixel, clamped to `[0, 1]`.
    Brightness,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::Scale,
        TransformKind::Rotate,
        TransformKind::Brightness,
    ];

    pub fn code(self) -> u8 {
        match self {
            TransformKind::TranslateX => 0,
            TransformKind::TranslateY => 1,
            TransformKind::Scale => 2,
            TransformKind::Rotate => 3,
            TransformKind::Brightness => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::TranslateX => "translate_x",
            TransformKind::TranslateY => "translate_y",
            TransformKind::Scale => "scale",
            TransformKind::Rotate => "rotate",
            TransformKind::Brightness => "brightness",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub t: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, t: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "transform parameter must be finite, got {t}"
            )));
        }
        Ok(Self { kind, t })
    }
}

/// An image with per-pixel validity; invalid pixels are ignored by losses.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    image: ImageGrid,
    mask: Vec<bool>,
}

impl MaskedImage {
    pub fn new(image: ImageGrid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != image.len() {
            return Err(Error::shape(image.len(), mask.len()));
        }
        Ok(Self { image, mask })
    }

    pub fn full(image: ImageGrid) -> Self {
        let mask = vec![true; image.len()];
        Self { image, mask }
    }

    pub fn image(&self) -> &ImageGrid {
        &self.image
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_masked(&self) -> bool {
        !self.mask.contains(&true)
    }
}

/// Bilinear sample at fractional pixel index `(v, u)` (row, column).
/// Returns `None` when the point lies outside the sampling grid.
fn bilinear(img: &ImageGrid, v: f64, u: f64) -> Option<f64> {
    let (h, w) = img.shape();
    let (hm, wm) = ((h - 1) as f64, (w - 1) as f64);
    if !(v >= -FRAME_EPS && v <= hm + FRAME_EPS && u >= -FRAME_EPS && u <= wm + FRAME_EPS) {
        return None;
    }
    let v = v.clamp(0.0, hm);
    let u = u.clamp(0.0, wm);
    let i0 = (v.floor() as usize).min(h.saturating_sub(2));
    let j0 = (u.floor() as usize).min(w.saturating_sub(2));
    let fy = v - i0 as f64;
    let fx = u - j0 as f64;
    let i1 = (i0 + 1).min(h - 1);
    let j1 = (j0 + 1).min(w - 1);
    let top = img.get(i0, j0) * (1.0 - fx) + img.get(i0, j1) * fx;
    let bottom = img.get(i1, j0) * (1.0 - fx) + img.get(i1, j1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Applies `spec` to `image`. Geometric kinds pull each output pixel centre
/// back to the source frame and resample bilinearly; output pixels whose
/// source falls outside the frame are marked invalid. A fully invalid
/// result is returned as is; see [`MaskedImage::is_fully_masked`].
pub fn transform_apply(image: &ImageGrid, spec: TransformSpec) -> MaskedImage {
    let (h, w) = image.shape();
    let t = spec.t;
    if spec.kind == TransformKind::Brightness {
        return MaskedImage::full(image.map(|v| (v + t).clamp(0.0, 1.0)));
    }
    if t == 0.0 {
        return MaskedImage::full(image.clone());
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = t.sin_cos();
    let zoom = t.exp2();
    let mut values = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            // output pixel centre
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            let (sx, sy) = match spec.kind {
                TransformKind::TranslateX => (px - t, py),
                TransformKind::TranslateY => (px, py - t),
                TransformKind::Scale => (cx + (px - cx) / zoom, cy + (py - cy) / zoom),
                TransformKind::Rotate => {
                    // inverse rotation; y grows downwards so screen-CCW is -t here
                    let (dx, dy) = (px - cx, py - cy);
                    (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
                }
                TransformKind::Brightness => unreachable!(),
            };
            match bilinear(image, sy - 0.5, sx - 0.5) {
                Some(v) => {
                    values.push(v);
                    mask.push(true);
                }
                None => {
                    values.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    MaskedImage {
        image: ImageGrid::new(h, w, values).expect("resampled values are finite"),
        mask,
    }
}
