//! Raster types shared by every stage: 8-bit camera frames, binary masks and
//! the size-normalized silhouette.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

/// Side length of a normalized silhouette and of every gait template.
pub const FRAME_SIZE: usize = 240;
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;

/// 8-bit grayscale camera frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GaitError::invalid("raw frame must have nonzero dimensions"));
        }
        if data.len() != width * height {
            return Err(GaitError::dims(width * height, data.len()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| GaitError::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction");
        img.save(path).map_err(|source| GaitError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Axis-aligned pixel bounding box, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix0 = self.x0.max(other.x0);
        let iy0 = self.y0.max(other.y0);
        let ix1 = self.x1.min(other.x1);
        let iy1 = self.y1.min(other.y1);
        if ix0 > ix1 || iy0 > iy1 {
            return 0.0;
        }
        let inter = ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }
}

/// Binary raster; 0 is background, 1 is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Builds an image from arbitrary bytes; any nonzero value is foreground.
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(GaitError::dims(width * height, data.len()));
        }
        let data = data.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    img.data[y * width + x] = 1;
                }
            }
        }
        img
    }

    /// Thresholds a grayscale frame: pixels `>= threshold` become foreground.
    pub fn from_raw(frame: &RawFrame, threshold: u8) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            data: frame.data().iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Bounds-checked access that treats everything outside as background.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&v| v != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
            bb = Some(match bb {
                None => BoundingBox {
                    x0: first,
                    y0: y,
                    x1: last,
                    y1: y,
                },
                Some(b) => BoundingBox {
                    x0: b.x0.min(first),
                    y0: b.y0,
                    x1: b.x1.max(last),
                    y1: y,
                },
            });
        }
        bb
    }

    /// Mean column of the foreground, in pixel-index units.
    pub fn centroid_column(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sum += x as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn mirrored(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn to_raw(&self) -> RawFrame {
        RawFrame::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("dimensions carried over")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_raw().save_png(path)
    }

    /// Loads an 8-bit grayscale PNG; values `>= 128` are foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(Self::from_raw(&RawFrame::load_png(path)?, 128))
    }
}

/// Binarized, size-normalized 240×240 silhouette.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SilhouetteFrame(BinaryImage);

impl SilhouetteFrame {
    pub fn new(image: BinaryImage) -> Result<Self> {
        if image.width() != FRAME_SIZE || image.height() != FRAME_SIZE {
            return Err(GaitError::dims(
                format!("{FRAME_SIZE}x{FRAME_SIZE}"),
                format!("{}x{}", image.width(), image.height()),
            ));
        }
        Ok(Self(image))
    }

    pub fn empty() -> Self {
        Self(BinaryImage::new(FRAME_SIZE, FRAME_SIZE))
    }

    pub fn image(&self) -> &BinaryImage {
        &self.0
    }

    pub fn into_image(self) -> BinaryImage {
        self.0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y)
    }

    pub fn data(&self) -> &[u8] {
        self.0.data()
    }
}
