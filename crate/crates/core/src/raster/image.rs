//! Dense row-major `H x W x C` float images, with a lossless `IMG1` dump and
//! an 8-bit PNG preview.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const IMAGE_MAGIC: &[u8; 4] = b"IMG1";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("malformed image: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Png(#[from] image::ImageError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let data = (0..width * height).flat_map(|_| value.iter().copied()).collect();
        Self { width, height, channels: value.len(), data }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn write_img1<W: Write>(&self, w: &mut W) -> Result<(), ImageError> {
        w.write_all(IMAGE_MAGIC)?;
        for v in [self.height, self.width, self.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_img1<R: Read>(r: &mut R) -> Result<Self, ImageError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != IMAGE_MAGIC {
            return Err(ImageError::Format("missing IMG1 magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
        let (height, width, channels) = (word(4), word(8), word(12));
        let mut bytes = vec![0u8; height * width * channels * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(Self { width, height, channels, data })
    }

    pub fn save_img1(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_img1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// 8-bit preview of a 1- or 3-channel image, values clamped to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => {
                let buf = self.data.iter().map(|v| to_u8(*v)).collect();
                image::GrayImage::from_raw(w, h, buf).expect("buffer size").save(path)?;
            }
            3 => {
                let buf = self.data.iter().map(|v| to_u8(*v)).collect();
                image::RgbImage::from_raw(w, h, buf).expect("buffer size").save(path)?;
            }
            c => return Err(ImageError::Format(format!("cannot preview a {c}-channel image"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn img1_layout_and_round_trip() {
        let img = Image::from_fn(3, 2, 2, |x, y, c| (x + 10 * y + 100 * c) as f64);
        let mut buf = Vec::new();
        img.write_img1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"IMG1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        // second value is channel 1 of pixel (0, 0)
        assert_eq!(f32::from_le_bytes(buf[20..24].try_into().unwrap()), 100.0);
        let back = Image::read_img1(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn png_preview_writes() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(4, 4, &[0.2, 0.5, 1.5]);
        img.save_png(&dir.path().join("a.png")).unwrap();
        assert!(img.save_png(&dir.path().join("b.png")).is_ok());
        assert!(Image::zeros(2, 2, 4).save_png(&dir.path().join("c.png")).is_err());
    }
}
