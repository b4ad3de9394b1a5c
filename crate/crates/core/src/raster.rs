//! Owned 8-bit RGB rasters and file IO.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit RGB raster with non-zero dimensions.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::domain(format!(
                "expected {expected} bytes for {width}x{height} RGB, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Uniformly colored image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies `src` into this image with its top-left corner at `(x0, y0)`.
    /// Pixels falling outside are dropped.
    pub fn blit(&mut self, src: &RgbImage, x0: u32, y0: u32) {
        for y in 0..src.height {
            let ty = y0 + y;
            if ty >= self.height {
                break;
            }
            for x in 0..src.width {
                let tx = x0 + x;
                if tx >= self.width {
                    break;
                }
                self.put_pixel(tx, ty, src.pixel(x, y));
            }
        }
    }

    /// Reads a PNG or TIFF file, converting it to 8-bit RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })?;
        Self::from(decoded.into_rgb8())
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    /// Writes the image; the container is chosen from the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })
    }

    fn from(buf: image::RgbImage) -> Result<Self> {
        let (w, h) = buf.dimensions();
        Self::new(w, h, buf.into_raw())
    }
}
