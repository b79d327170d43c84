//! 8-bit PNG / binary PGM reading and writing, plus bilinear resizing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::{self, FilterType};
use image::{ExtendedColorType, GrayImage, ImageBuffer, ImageEncoder, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Extensions accepted as image inputs.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported image format (expected .png or .pgm)",
            path.display()
        ))),
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, format_for(path)?).map_err(|e| Error::image(path, e))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(open(path.as_ref())?.to_rgb8())
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    Ok(open(path.as_ref())?.to_luma8())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write(path: &Path, raw: &[u8], w: u32, h: u32, color: ExtendedColorType, pnm: PnmSubtype) -> Result<()> {
    let fmt = format_for(path)?;
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = match fmt {
        ImageFormat::Png => PngEncoder::new(&mut out).write_image(raw, w, h, color),
        _ => PnmEncoder::new(&mut out).with_subtype(pnm).write_image(raw, w, h, color),
    };
    res.map_err(|e| Error::image(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes grayscale as PNG or binary PGM (P5), chosen by extension.
pub fn write_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let (w, h) = img.dimensions();
    let pnm = PnmSubtype::Graymap(SampleEncoding::Binary);
    write(path.as_ref(), img.as_raw(), w, h, ExtendedColorType::L8, pnm)
}

/// Writes RGB as PNG or binary PPM (P6), chosen by extension.
pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let (w, h) = img.dimensions();
    let pnm = PnmSubtype::Pixmap(SampleEncoding::Binary);
    write(path.as_ref(), img.as_raw(), w, h, ExtendedColorType::Rgb8, pnm)
}

/// Bilinear resize of an RGB image to `w×h`; identity when sizes match.
pub fn resize_rgb(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.dimensions() == (w, h) {
        return img.clone();
    }
    imageops::resize(img, w, h, FilterType::Triangle)
}

/// Bilinear resize of a real-valued single-channel map.
pub fn resize_map(data: &[f32], src_w: u32, src_h: u32, w: u32, h: u32) -> Vec<f32> {
    if (src_w, src_h) == (w, h) {
        return data.to_vec();
    }
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(src_w, src_h, data.to_vec()).expect("buffer length matches extents");
    imageops::resize(&buf, w, h, FilterType::Triangle).into_raw()
}

/// RGB pixels scaled to `[0, 1]`, height-width-channel order.
pub fn rgb_to_unit(img: &RgbImage) -> Vec<f32> {
    img.as_raw().iter().map(|&v| v as f32 / 255.0).collect()
}

/// Copy of `img` with `mask` pixels painted `color`.
pub fn paint(img: &RgbImage, mask: &[bool], color: [u8; 3]) -> RgbImage {
    let mut out = img.clone();
    for (px, &on) in out.pixels_mut().zip(mask) {
        if on {
            *px = Rgb(color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_round_trips_through_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| Luma([(x * 31 + y * 7) as u8]));
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            write_gray(&p, &img).unwrap();
            assert_eq!(read_gray(&p).unwrap(), img);
        }
        let raw = std::fs::read(dir.path().join("a.pgm")).unwrap();
        assert_eq!(&raw[..2], b"P5");
    }

    #[test]
    fn rejects_unknown_extension() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(2, 2);
        assert!(matches!(write_gray(dir.path().join("x.bmp"), &img), Err(Error::InvalidArgument(_))));
        assert!(read_gray(dir.path().join("missing.png")).is_err());
    }

    #[test]
    fn resize_preserves_constants() {
        let v = resize_map(&[0.25; 12], 4, 3, 9, 5);
        assert_eq!(v.len(), 45);
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-6));
    }
}
