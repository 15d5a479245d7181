//! 8-bit PNG encoding for images and label maps.

use std::io::Cursor;

use image::{ColorType, DynamicImage, ImageEncoder, ImageFormat, ImageReader};
use image::codecs::png::PngEncoder;

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};

fn encode(data: &[u8], width: usize, height: usize, color: ColorType) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(data, width as u32, height as u32, color.into())
        .map_err(|e| SpadError::Image(e.to_string()))?;
    Ok(buf)
}

fn decode_gray(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    // The reader applies the crate's default allocation limits.
    let img = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| SpadError::Image(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Ok((h, w, g.into_raw())),
        other => Err(SpadError::Image(format!(
            "expected 8-bit grayscale PNG, found {:?}",
            other.color()
        ))),
    }
}

/// Intensities are rounded to the nearest multiple of 1/255.
pub fn encode_image_png(image: &Image) -> Result<Vec<u8>> {
    let data: Vec<u8> = image
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode(&data, image.width(), image.height(), ColorType::L8)
}

pub fn decode_image_png(bytes: &[u8]) -> Result<Image> {
    let (h, w, data) = decode_gray(bytes)?;
    Image::from_vec(h, w, data.into_iter().map(|v| v as f32 / 255.0).collect())
}

pub fn encode_label_png(label: &LabelMap) -> Result<Vec<u8>> {
    encode(label.as_slice(), label.width(), label.height(), ColorType::L8)
}

pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap> {
    let (h, w, data) = decode_gray(bytes)?;
    LabelMap::from_vec(h, w, data)
}

/// `rgb` holds `3 * width * height` interleaved bytes.
pub fn encode_rgb_png(rgb: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(SpadError::ShapeMismatch(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    encode(rgb, width, height, ColorType::Rgb8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantised_image_round_trips() {
        let img = Image::from_fn(5, 7, |r, c| ((r * 7 + c) * 7) as f32 / 255.0);
        assert_eq!(decode_image_png(&encode_image_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn rejects_rgb_for_labels() {
        let png = encode_rgb_png(&[0u8; 12], 2, 2).unwrap();
        assert!(decode_label_png(&png).is_err());
        assert!(decode_label_png(b"not a png").is_err());
    }
}
