//! Conversions between decoded 8-bit images and `(3, H, W)` float arrays in
//! display units `[0, 255]`.

use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use ndarray::{s, Array2, Array3};

use crate::{Error, Result};

/// Decodes a PNG or JPEG file to 8-bit RGB. Grayscale files are rejected.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?;
    match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => Err(Error::data(format!(
            "{}: grayscale images are not accepted",
            path.display()
        ))),
        other => Ok(other.to_rgb8()),
    }
}

pub fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Array3::from_shape_fn((3, h, w), |(c, y, x)| raw[(y * w + x) * 3 + c] as f32)
}

/// Rounds to the nearest integer and clamps to `[0, 255]`.
pub fn array_to_rgb(pixels: &Array3<f32>) -> RgbImage {
    let (_, h, w) = pixels.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| pixels[[c, y as usize, x as usize]].round().clamp(0.0, 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Same quantisation as [`array_to_rgb`], kept in float form.
pub fn quantize(pixels: &Array3<f32>) -> Array3<f32> {
    pixels.mapv(|v| v.round().clamp(0.0, 255.0))
}

pub fn save_png(pixels: &Array3<f32>, path: &Path) -> Result<()> {
    array_to_rgb(pixels).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn crop(pixels: &Array3<f32>, top: usize, left: usize, h: usize, w: usize) -> Array3<f32> {
    pixels.slice(s![.., top..top + h, left..left + w]).to_owned()
}

pub fn center_crop(pixels: &Array3<f32>, h: usize, w: usize) -> Result<Array3<f32>> {
    let (_, ih, iw) = pixels.dim();
    if ih < h || iw < w {
        return Err(Error::shape(format!("cannot center-crop {ih}x{iw} to {h}x{w}")));
    }
    Ok(crop(pixels, (ih - h) / 2, (iw - w) / 2, h, w))
}

/// ITU-R BT.601 luma.
pub fn luminance(pixels: &Array3<f32>) -> Array2<f64> {
    let (_, h, w) = pixels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * pixels[[0, y, x]] as f64
            + 0.587 * pixels[[1, y, x]] as f64
            + 0.114 * pixels[[2, y, x]] as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_rgb_round_trip() {
        let a = Array3::from_shape_fn((3, 4, 5), |(c, y, x)| (c * 50 + y * 10 + x) as f32);
        assert_eq!(rgb_to_array(&array_to_rgb(&a)), a);
    }

    #[test]
    fn quantize_clamps_and_rounds() {
        let a = Array3::from_shape_vec((3, 1, 1), vec![-3.0, 254.6, 17.49]).unwrap();
        assert_eq!(quantize(&a).into_raw_vec_and_offset().0, vec![0.0, 255.0, 17.0]);
    }

    #[test]
    fn center_crop_takes_middle() {
        let a = Array3::from_shape_fn((3, 6, 6), |(_, y, x)| (y * 6 + x) as f32);
        let c = center_crop(&a, 2, 2).unwrap();
        assert_eq!(c[[0, 0, 0]], 14.0);
        assert!(center_crop(&a, 7, 2).is_err());
    }
}
