//! Single-channel images: real-valued magnitude rasters and 8-bit grayscale.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Real-valued, row-major magnitude image. Values are finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("raster must be non-empty, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} raster needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::ValueOverflow {
                index,
                value: data[index],
            });
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Raster::new(width, height, vec![value; width * height])
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `[1, H, W]` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width], self.data.clone())
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 || x + width > self.width || y + height > self.height {
            return Err(Error::dim(format!(
                "crop {width}x{height} at ({x},{y}) exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for row in y..y + height {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + width]);
        }
        Ok(Raster::from_parts(width, height, data))
    }

    /// Bilinear resampling with pixel centres aligned (`(i + 0.5) * scale - 0.5`)
    /// and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 {
            return Err(Error::dim("resize target must be non-empty"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let sample = |pos: f64, n: usize| -> (usize, usize, f64) {
            let p = pos.clamp(0.0, (n - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, self.width);
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        Ok(Raster::from_parts(width, height, data))
    }

    /// Rounds every value through `f32`, so the raster survives a SASR round trip unchanged.
    pub fn quantize_f32(mut self) -> Raster {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }

    /// Maps `[0, peak]` linearly onto `[0, 255]` with rounding and clipping.
    /// A zero peak maps to an all-black image.
    pub fn to_gray(&self, peak: f64) -> GrayImage {
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .data
                .iter()
                .map(|v| (v * scale).round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn to_raster(&self) -> Raster {
        Raster::from_parts(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| f64::from(p)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_negative_and_nan() {
        assert!(Raster::new(2, 1, vec![0.0, -1.0]).is_err());
        assert!(Raster::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Raster::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn crop_and_identity_resize() {
        let r = Raster::new(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let c = r.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert_eq!(r.resize_bilinear(4, 3).unwrap(), r);
        assert!(r.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn bilinear_preserves_constants_and_ramps() {
        let r = Raster::filled(5, 7, 0.4).unwrap();
        let s = r.resize_bilinear(9, 3).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        // 2x upsampling of a horizontal ramp stays monotone
        let ramp = Raster::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = ramp.resize_bilinear(8, 1).unwrap();
        assert!(up.data().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(up.data()[0], 0.0);
        assert_eq!(up.data()[7], 3.0);
    }

    #[test]
    fn gray_conversion_clips() {
        let r = Raster::new(3, 1, vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(r.to_gray(1.0).pixels, vec![0, 128, 255]);
    }
}
