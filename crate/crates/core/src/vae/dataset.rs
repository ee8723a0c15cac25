use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffgen::{render_sprite, Edge, ShapeKind};
use crate::error::{Error, Result};
use crate::numerics::{rng_for, to_byte, ImageGrid};

/// Law of the sprite centre offset, in image-size units around the centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum PositionLaw {
    /// Independent uniform offsets on `[-half, half]` in both axes.
    Uniform {
        half: f64,
    },
    Fixed {
        x: f64,
        y: f64,
    },
}

impl Default for PositionLaw {
    fn default() -> Self {
        PositionLaw::Uniform { half: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum RadiusLaw {
    Uniform { min: f64, max: f64 },
    Fixed { r: f64 },
}

impl Default for RadiusLaw {
    fn default() -> Self {
        RadiusLaw::Uniform { min: 3.0, max: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpriteDatasetSpec {
    pub height: usize,
    pub width: usize,
    pub shape: ShapeKind,
    pub position: PositionLaw,
    pub radius: RadiusLaw,
    pub hard_edge: bool,
    /// Edge width of soft sprites, in pixels.
    pub tau: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SpriteDatasetSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            shape: ShapeKind::Disc,
            position: PositionLaw::default(),
            radius: RadiusLaw::default(),
            hard_edge: true,
            tau: 1.0,
            count: 20_000,
            seed: 0,
        }
    }
}

impl SpriteDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.count == 0 {
            return bad("sample count must be >= 1");
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive");
        }
        match self.radius {
            RadiusLaw::Uniform { min, max } if !(min > 0.0 && min < max && max.is_finite()) => {
                return bad("radius law needs 0 < r_min < r_max")
            }
            RadiusLaw::Fixed { r } if !(r > 0.0 && r.is_finite()) => {
                return bad("radius must be positive")
            }
            _ => {}
        }
        match self.position {
            PositionLaw::Uniform { half } if !(half >= 0.0 && half.is_finite()) => {
                return bad("position half-width must be >= 0")
            }
            PositionLaw::Fixed { x, y } if !(x.is_finite() && y.is_finite()) => {
                return bad("fixed position must be finite")
            }
            _ => {}
        }
        if !self.hard_edge && !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive for soft edges");
        }
        Ok(())
    }

    fn edge(&self) -> Edge {
        if self.hard_edge {
            Edge::Hard
        } else {
            Edge::Soft { tau: self.tau }
        }
    }
}

/// Images quantised to one byte per pixel, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteDataset {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl SpriteDataset {
    pub fn from_bytes(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        let per = height * width;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::shape(
                format!("multiple of {per} bytes"),
                pixels.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Raw bytes of image `i`.
    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let per = self.height * self.width;
        &self.pixels[i * per..(i + 1) * per]
    }

    pub fn image(&self, i: usize) -> ImageGrid {
        let values = self
            .image_bytes(i)
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        ImageGrid::new(self.height, self.width, values).expect("stored sizes are consistent")
    }

    pub fn write_spr1<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"SPR1")?;
        for v in [self.len(), self.height, self.width] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        out.write_all(&self.pixels)
    }

    pub fn read_spr1<R: Read>(mut input: R) -> Result<Self> {
        let mut head = [0u8; 16];
        input
            .read_exact(&mut head)
            .map_err(|e| truncated(e, "SPR1"))?;
        if &head[..4] != b"SPR1" {
            return Err(Error::BadMagic { expected: "SPR1" });
        }
        let word =
            |k: usize| u32::from_le_bytes(head[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let (count, height, width) = (word(1), word(2), word(3));
        if count == 0 || height == 0 || width == 0 {
            return Err(Error::InvariantViolation(
                "SPR1 header has a zero dimension".into(),
            ));
        }
        let total = count
            .checked_mul(height * width)
            .ok_or_else(|| Error::InvariantViolation("SPR1 size overflows".into()))?;
        let mut pixels = Vec::new();
        input.take(total as u64 + 1).read_to_end(&mut pixels)?;
        if pixels.len() < total {
            return Err(Error::Truncated("SPR1"));
        }
        if pixels.len() > total {
            return Err(Error::InvariantViolation(
                "trailing bytes after SPR1 payload".into(),
            ));
        }
        Self::from_bytes(height, width, pixels)
    }
}

pub(crate) fn truncated(e: std::io::Error, what: &'static str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated(what)
    } else {
        Error::Io(e)
    }
}

/// Renders `spec.count` sprites, drawing position then radius per sample
/// from one seeded stream.
pub fn synth_dataset(spec: &SpriteDatasetSpec) -> Result<SpriteDataset> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng_for(spec.seed);
    let mut pixels = Vec::with_capacity(spec.count * h * w);
    for _ in 0..spec.count {
        let (x, y) = match spec.position {
            PositionLaw::Uniform { half } => (
                rng.random_range(-half..=half),
                rng.random_range(-half..=half),
            ),
            PositionLaw::Fixed { x, y } => (x, y),
        };
        let r = match spec.radius {
            RadiusLaw::Uniform { min, max } => rng.random_range(min..=max),
            RadiusLaw::Fixed { r } => r,
        };
        let cx = w as f64 / 2.0 + x * w as f64;
        let cy = h as f64 / 2.0 + y * h as f64;
        let img = render_sprite(h, w, cx, cy, r, spec.shape, spec.edge());
        pixels.extend(img.values().iter().map(|&v| to_byte(v)));
    }
    SpriteDataset::from_bytes(h, w, pixels)
}
