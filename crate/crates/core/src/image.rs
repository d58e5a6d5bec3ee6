//! In-memory images and the PNG encodings used for dataset triplets.
//!
//! Masks are stored as 8-bit single-channel PNG (0/255), shadow maps as
//! 16-bit single-channel PNG (`round(65535 * occlusion)`) and previews as
//! 8-bit RGB PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error on {path}: {message}")]
    Decode { path: String, message: String },
    #[error("png encode error: {0}")]
    Encode(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("unsupported png layout in {path}: {layout}")]
    Unsupported { path: String, layout: String },
}

/// Single-channel real-valued image, row-major, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "data length must equal width * height"
        );
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn check_same_shape(&self, other: &GrayImage) -> Result<(), ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Binary image, 1 = object.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|&v| f64::from(v.min(1))).collect(),
        )
    }
}

/// Three-channel real-valued image in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> GrayImage {
        GrayImage::from_vec(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        )
    }
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn create(path: &Path) -> Result<BufWriter<File>, ImageError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| ImageError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn encode<W: Write>(
    w: W,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<(), ImageError> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    writer
        .finish()
        .map_err(|e| ImageError::Encode(e.to_string()))
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<(), ImageError> {
    let bytes: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| if v != 0 { 255 } else { 0 })
        .collect();
    encode(
        create(path)?,
        mask.width,
        mask.height,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &bytes,
    )
}

/// Writes `round(65535 * v)` as big-endian 16-bit gray.
pub fn save_shadow_png(shadow: &GrayImage, path: &Path) -> Result<(), ImageError> {
    let mut bytes = Vec::with_capacity(shadow.data.len() * 2);
    for &v in &shadow.data {
        bytes.extend_from_slice(&(quantize(v, 65535.0) as u16).to_be_bytes());
    }
    encode(
        create(path)?,
        shadow.width,
        shadow.height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .flat_map(|p| p.map(|c| quantize(c, 255.0) as u8))
        .collect();
    encode(
        create(path)?,
        img.width,
        img.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &bytes,
    )
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    /// Samples normalized to [0,1].
    samples: Vec<f64>,
}

fn decode(path: &Path) -> Result<Decoded, ImageError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| ImageError::Io {
        path: display.clone(),
        source,
    })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| ImageError::Decode {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Decode {
            path: display.clone(),
            message: "image too large".into(),
        })?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Decode {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(ImageError::Unsupported {
                path: display,
                layout: "indexed color".into(),
            })
        }
    };
    let bytes = &buf[..info.buffer_size()];
    let samples = match info.bit_depth {
        png::BitDepth::Eight => bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        png::BitDepth::Sixteen => bytes
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        other => {
            return Err(ImageError::Unsupported {
                path: display,
                layout: format!("bit depth {other:?}"),
            })
        }
    };
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        samples,
    })
}

/// Loads any 8- or 16-bit PNG as gray; color inputs are reduced to luma.
pub fn load_gray_png(path: &Path) -> Result<GrayImage, ImageError> {
    let d = decode(path)?;
    let data = d
        .samples
        .chunks_exact(d.channels)
        .map(|px| match d.channels {
            1 | 2 => px[0],
            _ => 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2],
        })
        .collect();
    Ok(GrayImage::from_vec(d.width, d.height, data))
}

pub fn load_mask_png(path: &Path) -> Result<Mask, ImageError> {
    let g = load_gray_png(path)?;
    Ok(Mask {
        width: g.width,
        height: g.height,
        data: g.data.iter().map(|&v| u8::from(v >= 0.5)).collect(),
    })
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage, ImageError> {
    let d = decode(path)?;
    let data = d
        .samples
        .chunks_exact(d.channels)
        .map(|px| match d.channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        })
        .collect();
    Ok(RgbImage {
        width: d.width,
        height: d.height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadow_png_uses_sixteen_bit_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let img = GrayImage::from_vec(3, 1, vec![0.0, 1.0 / 256.0, 1.0]);
        save_shadow_png(&img, &path).unwrap();
        let back = load_gray_png(&path).unwrap();
        assert_eq!(back.shape(), (3, 1));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
    }

    #[test]
    fn mask_and_rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mask = Mask::new(4, 2);
        mask.data[3] = 1;
        mask.data[6] = 1;
        save_mask_png(&mask, &dir.path().join("m.png")).unwrap();
        assert_eq!(load_mask_png(&dir.path().join("m.png")).unwrap(), mask);

        let rgb = RgbImage::filled(2, 2, [1.0, 0.0, 128.0 / 255.0]);
        save_rgb_png(&rgb, &dir.path().join("c.png")).unwrap();
        assert_eq!(load_rgb_png(&dir.path().join("c.png")).unwrap(), rgb);
    }
}
