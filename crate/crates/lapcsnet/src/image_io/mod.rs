//! Grayscale image handling: PGM/PNG load and save, bicubic resampling
//! and training-time augmentation.

mod augment;
mod resize;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use augment::{augment, augment_with, AugmentParams};
pub use resize::bicubic_resize;

/// Single-channel image with luminance samples in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("image dimensions must be at least 1x1".into()));
        }
        if samples.len() != width * height {
            return Err(Error::Shape(format!(
                "sample count {} does not match {width}x{height}",
                samples.len()
            )));
        }
        Ok(ImagePlane { width, height, samples })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    /// Top-left crop.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Argument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            samples.extend_from_slice(&self.samples[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self::new(w, h, samples)
    }

    /// Crop to the largest top-left region whose sides are multiples of
    /// `block`; errors when the image is smaller than one block.
    pub fn crop_to_multiple(&self, block: usize) -> Result<Self> {
        let w = (self.width / block) * block;
        let h = (self.height / block) * block;
        if w == 0 || h == 0 {
            return Err(Error::Data(format!(
                "image {}x{} is smaller than one {block}x{block} block",
                self.width, self.height
            )));
        }
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        self.crop(0, 0, w, h)
    }

    /// `[1, 1, height, width]` tensor of the samples.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let values: Vec<T> = self.samples.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(&[1, 1, self.height, self.width], values).expect("dims match samples")
    }

    /// Plane from a `[1, 1, H, W]` tensor, clamped into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(tensor: &Tensor<T>) -> Result<Self> {
        let &[1, 1, h, w] = tensor.dims() else {
            return Err(Error::Shape(format!(
                "expected a [1,1,H,W] tensor, got {:?}",
                tensor.dims()
            )));
        };
        let samples: Vec<f64> =
            tensor.values().iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect();
        Self::new(w, h, samples)
    }
}

/// BT.601 luminance weights used for RGB-to-gray conversion.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Load an 8-bit PGM (binary P5) or PNG image as a luminance plane in
/// `[0, 1]`; RGB inputs are converted with BT.601 weights.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else {
        Err(Error::format(path, "unsupported image format (expected binary PGM P5 or PNG)"))
    }
}

/// Save a plane as PGM or PNG depending on the file extension. Samples are
/// clamped to `[0, 1]` and quantized with `round(v * 255)`.
pub fn save_image(plane: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = quantize(plane);
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", plane.width, plane.height).into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let img = image::GrayImage::from_raw(plane.width as u32, plane.height as u32, bytes)
                .expect("buffer sized from plane");
            img.save(path).map_err(|e| Error::format(path, format!("png encode failed: {e}")))
        }
        other => Err(Error::Argument(format!(
            "unsupported output extension {other:?} (use .pgm or .png)"
        ))),
    }
}

/// Clamp and quantize samples to bytes with round-half-up.
pub fn quantize(plane: &ImagePlane) -> Vec<u8> {
    plane.samples.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    let mut pos = 2; // past "P5"
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = read_pgm_int(path, bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported PGM maxval {maxval} (expected 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width * height;
    let raster = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| Error::format(path, "PGM raster truncated"))?;
    let samples: Vec<f64> = raster.iter().map(|&b| b as f64 / 255.0).collect();
    ImagePlane::new(width, height, samples)
}

fn read_pgm_int(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // Skip whitespace and '#' comment lines.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(Error::format(path, "PGM header truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::format(path, "expected integer in PGM header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, "invalid integer in PGM header"))
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("png decode failed: {e}")))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let samples: Vec<f64> = match &img {
        image::DynamicImage::ImageLuma8(gray) => {
            gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(gray) => {
            gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
        }
        image::DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| {
                (LUMA[0] * p.0[0] as f64 + LUMA[1] * p.0[1] as f64 + LUMA[2] * p.0[2] as f64)
                    / 255.0
            })
            .collect(),
        image::DynamicImage::ImageRgba8(rgba) => rgba
            .pixels()
            .map(|p| {
                (LUMA[0] * p.0[0] as f64 + LUMA[1] * p.0[1] as f64 + LUMA[2] * p.0[2] as f64)
                    / 255.0
            })
            .collect(),
        _ => {
            return Err(Error::format(
                path,
                format!("unsupported PNG pixel format {:?} (expected 8-bit gray or RGB)", img.color()),
            ))
        }
    };
    ImagePlane::new(width, height, samples)
}
