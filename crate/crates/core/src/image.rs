//! Dense float image buffers.
//!
//! `Image` is row-major H x W x 3 with values nominally in [0, 1];
//! `ScalarImage` is a single-channel plane (depth, alpha, luminance).
//! Continuous pixel coordinates follow the crate convention: integer pixel
//! `(u, v)` samples the continuous point `(u, v)`.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions do not match: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("pixel ({0}, {1}) is outside a {2}x{3} image")]
    OutOfBounds(f64, f64, usize, usize),
    #[error("png error: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 channels per pixel.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Image {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> ScalarImage {
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            data.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
        }
        ScalarImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear sample with edge clamping, per channel.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let (x0, y0, fx, fy) = bilinear_setup(u, v, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let p00 = self.data[(y0 * self.width + x0) * 3 + c];
            let p10 = self.data[(y0 * self.width + x1) * 3 + c];
            let p01 = self.data[(y1 * self.width + x0) * 3 + c];
            let p11 = self.data[(y1 * self.width + x1) * 3 + c];
            out[c] = lerp(lerp(p00, p10, fx), lerp(p01, p11, fx), fy);
        }
        out
    }

    /// Bilinear resize. Output pixel `i` samples input coordinate
    /// `(i + 0.5) * w_in / w_out - 0.5` (center-aligned).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let mut out = Image::zeros(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let v = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                let u = (x as f64 + 0.5) * sx - 0.5;
                out.set_pixel(x, y, self.sample_bilinear(u, v));
            }
        }
        out
    }

    /// Direct 8-bit quantization: `round(clamp(x, 0, 1) * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Image {
        assert_eq!(bytes.len(), width * height * 3);
        Image {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let buf = self.to_rgb8();
        let img: image::RgbImage =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                .expect("buffer sized from dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ImageError::Png(e.to_string()))
    }

    pub fn load_png(path: &Path) -> Result<Image, ImageError> {
        let img = image::open(path)
            .map_err(|e| ImageError::Png(e.to_string()))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Image::from_rgb8(w, h, img.as_raw()))
    }
}

impl ScalarImage {
    pub fn zeros(width: usize, height: usize) -> ScalarImage {
        ScalarImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let (x0, y0, fx, fy) = bilinear_setup(u, v, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.data[y0 * self.width + x0];
        let p10 = self.data[y0 * self.width + x1];
        let p01 = self.data[y1 * self.width + x0];
        let p11 = self.data[y1 * self.width + x1];
        lerp(lerp(p00, p10, fx), lerp(p01, p11, fx), fy)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[inline]
fn bilinear_setup(u: f64, v: f64, width: usize, height: usize) -> (usize, usize, f64, f64) {
    let u = u.clamp(0.0, (width - 1) as f64);
    let v = v.clamp(0.0, (height - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    (x0, y0, u - x0 as f64, v - y0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_between_pixels() {
        let mut img = ScalarImage::zeros(2, 1);
        img.set(0, 0, 1.0);
        img.set(1, 0, 3.0);
        assert!((img.sample_bilinear(0.5, 0.0) - 2.0).abs() < 1e-12);
        assert_eq!(img.sample_bilinear(0.0, 0.0), 1.0);
        // Clamped outside the grid.
        assert_eq!(img.sample_bilinear(-5.0, 0.0), 1.0);
        assert_eq!(img.sample_bilinear(5.0, 0.0), 3.0);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Image::filled(37, 23, [0.25, 0.5, 0.75]);
        let small = img.resize_bilinear(16, 16);
        for px in small.data.chunks_exact(3) {
            assert!((px[0] - 0.25).abs() < 1e-12);
            assert!((px[1] - 0.5).abs() < 1e-12);
            assert!((px[2] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn rgb8_quantization_round_trips_exactly() {
        let mut img = Image::zeros(4, 2);
        for (i, x) in img.data.iter_mut().enumerate() {
            *x = (i % 256) as f64 / 255.0;
        }
        let bytes = img.to_rgb8();
        let back = Image::from_rgb8(4, 2, &bytes);
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join("splatloc_image_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.png");
        let mut img = Image::zeros(8, 5);
        for (i, x) in img.data.iter_mut().enumerate() {
            *x = ((i * 7) % 256) as f64 / 255.0;
        }
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.width, 8);
        assert_eq!(back.height, 5);
        assert_eq!(img.to_rgb8(), back.to_rgb8());
    }
}
