//! Binary segmentation masks and their on-disk form.
//!
//! Masks are stored as 8-bit grayscale PNG with foreground written as 255.
//! Loading accepts grayscale or RGB rasters and binarizes them with a
//! [`BinarizationPolicy`]; RGB is reduced to luma with the integer formula
//! `round((299 R + 587 G + 114 B) / 1000)` so the result does not depend on
//! the platform's floating-point behaviour.

use std::fmt;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image {0} has a zero dimension")]
    ZeroDimension(PathBuf),
    #[error("mask shapes differ: {a} vs {b}")]
    ShapeMismatch { a: Shape, b: Shape },
    #[error("bit buffer has {got} entries, expected {expected} for {shape}")]
    BadLength { shape: Shape, expected: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Width and height of a raster, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: u32,
    pub height: u32,
}

impl Shape {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Row-major boolean raster; `true` marks a foreground (membrane) pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("shape", &self.shape)
            .field("foreground", &self.foreground_count())
            .finish()
    }
}

impl BinaryMask {
    /// Builds a mask from a row-major bit buffer.
    ///
    /// Fails when either dimension is zero or the buffer length is not
    /// `width * height`.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let shape = Shape::new(width, height);
        if shape.is_empty() {
            return Err(MaskError::ZeroDimension(PathBuf::new()));
        }
        if bits.len() != shape.len() {
            return Err(MaskError::BadLength {
                shape,
                expected: shape.len(),
                got: bits.len(),
            });
        }
        Ok(Self { shape, bits })
    }

    /// All-background mask.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn empty(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            shape: Shape::new(width, height),
            bits: vec![false; width as usize * height as usize],
        }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            shape: Shape::new(width, height),
            bits,
        }
    }

    /// Parses an ASCII picture, one string per row: `#` or `1` is
    /// foreground, anything else background. Handy for fixtures.
    ///
    /// # Panics
    /// On ragged or empty input.
    pub fn from_ascii(rows: &[&str]) -> Self {
        assert!(!rows.is_empty(), "no rows");
        let width = rows[0].chars().count();
        assert!(width > 0, "empty row");
        let mut bits = Vec::with_capacity(width * rows.len());
        for row in rows {
            assert_eq!(row.chars().count(), width, "ragged ascii mask");
            bits.extend(row.chars().map(|c| c == '#' || c == '1'));
        }
        Self {
            shape: Shape::new(width as u32, rows.len() as u32),
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.shape.width
    }

    pub fn height(&self) -> u32 {
        self.shape.height
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    /// Foreground test; out-of-range coordinates read as background.
    pub fn get(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.shape.width as i64 || y >= self.shape.height as i64 {
            return false;
        }
        self.bits[y as usize * self.shape.width as usize + x as usize]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Foreground pixels as `(x, y)` in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.shape.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn to_gray_image(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.shape.width, self.shape.height, raw)
            .expect("buffer length matches shape")
    }
}

/// Which side of the threshold counts as foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `gray >= threshold` is foreground.
    LightIsForeground,
    /// `gray < threshold` is foreground.
    DarkIsForeground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinarizationPolicy {
    pub threshold: u8,
    pub polarity: Polarity,
}

impl Default for BinarizationPolicy {
    fn default() -> Self {
        Self {
            threshold: 128,
            polarity: Polarity::DarkIsForeground,
        }
    }
}

impl BinarizationPolicy {
    /// Policy that reads back files produced by [`write_mask`].
    pub const CANONICAL: Self = Self {
        threshold: 128,
        polarity: Polarity::LightIsForeground,
    };

    pub fn new(threshold: u8, polarity: Polarity) -> Self {
        Self {
            threshold,
            polarity,
        }
    }

    pub fn is_foreground(&self, gray: u8) -> bool {
        match self.polarity {
            Polarity::LightIsForeground => gray >= self.threshold,
            Polarity::DarkIsForeground => gray < self.threshold,
        }
    }

    /// Binarizes a row-major 8-bit gray buffer.
    pub fn apply(&self, width: u32, height: u32, gray: &[u8]) -> Result<BinaryMask, MaskError> {
        BinaryMask::from_bits(
            width,
            height,
            gray.iter().map(|&g| self.is_foreground(g)).collect(),
        )
    }
}

/// Integer luma with round-half-up.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

fn to_gray(img: DynamicImage, path: &Path) -> Result<GrayImage, MaskError> {
    let rgb_to_gray = |w: u32, h: u32, px: &mut dyn Iterator<Item = [u8; 3]>| {
        let raw: Vec<u8> = px.map(|[r, g, b]| luma(r, g, b)).collect();
        GrayImage::from_raw(w, h, raw).expect("buffer length matches shape")
    };
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageLumaA8(g) => Ok(DynamicImage::ImageLumaA8(g).to_luma8()),
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            let raw = g.into_raw().into_iter().map(|v| (v >> 8) as u8).collect();
            Ok(GrayImage::from_raw(w, h, raw).expect("buffer length matches shape"))
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            Ok(rgb_to_gray(w, h, &mut rgb.pixels().map(|p| p.0)))
        }
        DynamicImage::ImageRgba8(rgba) => {
            let (w, h) = rgba.dimensions();
            Ok(rgb_to_gray(
                w,
                h,
                &mut rgba.pixels().map(|p| [p.0[0], p.0[1], p.0[2]]),
            ))
        }
        other => Err(MaskError::Decode {
            path: path.to_path_buf(),
            reason: format!("unsupported pixel layout {:?}", other.color()),
        }),
    }
}

/// Reads an image file and binarizes it.
pub fn load_mask(path: impl AsRef<Path>, policy: BinarizationPolicy) -> Result<BinaryMask, MaskError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(MaskError::FileNotFound(path.to_path_buf()));
    }
    let img = image::ImageReader::open(path)
        .map_err(|source| MaskError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| MaskError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| MaskError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(MaskError::ZeroDimension(path.to_path_buf()));
    }
    let gray = to_gray(img, path)?;
    policy.apply(gray.width(), gray.height(), gray.as_raw())
}

/// Writes an 8-bit grayscale PNG: foreground 255, background 0.
pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    mask.to_gray_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => MaskError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => MaskError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(other.to_string()),
            },
        })
}

pub fn assert_same_shape(a: &BinaryMask, b: &BinaryMask) -> Result<(), MaskError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MaskError::ShapeMismatch {
            a: a.shape(),
            b: b.shape(),
        })
    }
}
