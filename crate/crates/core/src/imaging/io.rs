//! 8-bit PNG and binary PGM/PPM.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat, ImageReader};

use super::PlanarImage;
use crate::error::{Error, Result};

fn image_error(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn planar_from_interleaved(
    width: usize,
    height: usize,
    channels: usize,
    stride: usize,
    bytes: &[u8],
) -> Result<PlanarImage> {
    let n = width * height;
    let mut data = vec![0.0f32; n * channels];
    for (i, px) in bytes.chunks_exact(stride).enumerate() {
        for c in 0..channels {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    PlanarImage::new(width, height, channels, data)
}

/// Loads an 8-bit grayscale or colour image; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| image_error(path, e))?
        .with_guessed_format()
        .map_err(|e| image_error(path, e))?;
    let img = reader.decode().map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match &img {
        DynamicImage::ImageLuma8(b) => planar_from_interleaved(w, h, 1, 1, b.as_raw()),
        DynamicImage::ImageLumaA8(b) => planar_from_interleaved(w, h, 1, 2, b.as_raw()),
        DynamicImage::ImageRgb8(b) => planar_from_interleaved(w, h, 3, 3, b.as_raw()),
        DynamicImage::ImageRgba8(b) => planar_from_interleaved(w, h, 3, 4, b.as_raw()),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => Err(image_error(path, "16-bit images are not supported")),
        other => Err(image_error(
            path,
            format!("unsupported pixel format {:?}", other.color()),
        )),
    }
}

/// Writes an 8-bit image; the format follows the extension (png, pgm, ppm, pnm).
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "pgm" | "ppm" | "pnm" => ImageFormat::Pnm,
        _ => return Err(image_error(path, format!("unsupported extension {ext:?}"))),
    };
    let channels = img.channels();
    if (ext == "pgm" && channels != 1) || (ext == "ppm" && channels != 3) {
        return Err(image_error(
            path,
            format!("cannot store {channels} channels as .{ext}"),
        ));
    }
    let n = img.width() * img.height();
    let mut bytes = vec![0u8; n * channels];
    for c in 0..channels {
        for (i, v) in img.plane(c).iter().enumerate() {
            bytes[i * channels + c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    let color = if channels == 1 {
        ExtendedColorType::L8
    } else {
        ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        format,
    )
    .map_err(|e| image_error(path, e))
}
