//! Conversions between encoded images and tensors.
//!
//! Images travel as `[1, 3, H, W]` tensors in [−1, 1]; masks as PNGs where
//! 255 marks a known pixel and 0 a hole.

use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::masks::Mask;
use crate::tensor::Tensor;

fn decode_err(path: Option<&Path>) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Decode {
        path: path.map(Path::to_path_buf),
        source,
    }
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 3, h as usize, w as usize], |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 127.5 - 1.0
    })
}

/// Quantises a `[1, 3, H, W]` tensor in [−1, 1] to 8-bit RGB, clamping.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 3 {
        return Err(Error::invalid(format!("expected a [1, 3, H, W] image, got {:?}", t.shape())));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch| to_u8(t.at(0, ch, y as usize, x as usize));
        Rgb([px(0), px(1), px(2)])
    }))
}

fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes).map_err(decode_err(None))?.to_rgb8())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(decode_err(Some(path)))?.to_rgb8())
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(decode_err(None))?;
    Ok(buf.into_inner())
}

pub fn write_png(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(decode_err(Some(path)))
}

pub fn tensor_to_png(t: &Tensor) -> Result<Vec<u8>> {
    encode_png(&DynamicImage::ImageRgb8(tensor_to_rgb(t)?))
}

/// Largest centred square, resized to `size × size` with a triangle filter.
pub fn center_square(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let crop = image::imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side == size {
        crop
    } else {
        image::imageops::resize(&crop, size, size, FilterType::Triangle)
    }
}

/// Any mask pixel above 127 counts as known.
pub fn gray_to_mask(img: &GrayImage) -> Result<Mask> {
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| if p[0] > 127 { 1.0 } else { 0.0 }).collect();
    Mask::new(h as usize, w as usize, data)
}

pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.is_known(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    gray_to_mask(&image::load_from_memory(bytes).map_err(decode_err(None))?.to_luma8())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    gray_to_mask(&image::open(path).map_err(decode_err(Some(path)))?.to_luma8())
}

pub fn mask_to_png(mask: &Mask) -> Result<Vec<u8>> {
    encode_png(&DynamicImage::ImageLuma8(mask_to_gray(mask)))
}

pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    write_png(&DynamicImage::ImageLuma8(mask_to_gray(mask)), path)
}
