//! PNG images as planar `[C x H x W]` floats in [0, 1].
//!
//! 16-bit files are taken as linear. 8-bit files are display images and go
//! through the sRGB transfer curve in both directions.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// `3 x H x W` linear RGB.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::contract("image", "data is not 3 x H x W"));
        }
        Ok(Image { width, height, data })
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::io(path, e))
}

fn planar<const C: usize>(interleaved: &[f64], w: usize, h: usize) -> Vec<f64> {
    let n = w * h;
    let mut out = vec![0.0; C * n];
    for i in 0..n {
        for c in 0..C {
            out[c * n + i] = interleaved[i * C + c];
        }
    }
    out
}

/// Loads a photograph or rendered target as linear RGB. Alpha is dropped,
/// grey images are replicated to three channels.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    let eightbit = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::Rgb8 | image::ColorType::Rgba8
    );
    let data: Vec<f64> = if sixteen {
        img.to_rgb16().as_raw().iter().map(|&v| v as f64 / 65535.0).collect()
    } else if eightbit {
        img.to_rgb8()
            .as_raw()
            .iter()
            .map(|&v| srgb_to_linear(v as f64 / 255.0))
            .collect()
    } else {
        return Err(Error::io(path, format!("unsupported pixel format {:?}", img.color())));
    };
    Image::new(w, h, planar::<3>(&data, w, h))
}

/// Loads a 16-bit linear PNG keeping its channel count (1 or 3).
pub fn load_png16(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(b) => Ok((1, w, h, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect())),
        DynamicImage::ImageRgb16(b) => {
            let inter: Vec<f64> = b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            Ok((3, w, h, planar::<3>(&inter, w, h)))
        }
        other => Err(Error::io(path, format!("expected 16-bit grey or RGB, found {:?}", other.color()))),
    }
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes planar data with 1 or 3 channels as a 16-bit PNG.
pub fn save_png16(path: &Path, channels: usize, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let n = width * height;
    if data.len() != channels * n {
        return Err(Error::contract("save_png16", "data size does not match the image"));
    }
    let (w, h) = (width as u32, height as u32);
    let res = match channels {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data.iter().map(|&v| quantize16(v)).collect::<Vec<u16>>())
            .expect("sized above")
            .save(path),
        3 => {
            let raw: Vec<u16> = (0..3 * n).map(|i| quantize16(data[(i % 3) * n + i / 3])).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("sized above").save(path)
        }
        _ => return Err(Error::contract("save_png16", format!("{channels} channels"))),
    };
    res.map_err(|e| Error::io(path, e))
}

/// Writes a `3 x H x W` linear image as an 8-bit sRGB PNG for viewing.
pub fn save_srgb8(path: &Path, image: &Image) -> Result<()> {
    let n = image.width * image.height;
    let raw: Vec<u8> = (0..3 * n)
        .map(|i| (linear_to_srgb(image.data[(i % 3) * n + i / 3].clamp(0.0, 1.0)) * 255.0).round() as u8)
        .collect();
    ImageBuffer::<Rgb<u8>, _>::from_raw(image.width as u32, image.height as u32, raw)
        .expect("sized above")
        .save(path)
        .map_err(|e| Error::io(path, e))
}
