use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageBuffer, ImageEncoder, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes a PNG or PNM file into a `[3, H, W]` tensor with values in [0, 1].
/// Grayscale inputs are replicated across the three channels.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    rgb_to_tensor(&img)
}

pub fn rgb_to_tensor(img: &RgbImage) -> Result<Tensor<f32>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + at] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes a `[3, H, W]` tensor in [0, 1] to 8-bit RGB.
pub fn tensor_to_rgb<T: Scalar>(image: &Tensor<T>) -> Result<RgbImage> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|ch| to_u8(d[ch * h * w + at].to_f64())))
    }))
}

pub fn write_rgb(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    tensor_to_rgb(image)?.save(path).map_err(|e| image_error(path, e))
}

/// Writes 8-bit grayscale; the format follows the extension (`.png`, `.pgm`).
pub fn write_gray(path: impl AsRef<Path>, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Shape(format!("pixel buffer does not match {width}x{height}")))?;
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if !is_pgm {
        return img.save(path).map_err(|e| image_error(path, e));
    }
    // the generic PNM path would pick PAM (P7); force binary graymap (P5)
    let file = BufWriter::new(File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| image_error(path, e))
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| image_error(path, e))?.to_luma8())
}

/// Bilinear resampling of a `[C, H, W]` tensor with half-pixel centres
/// (edge samples are clamped).
pub fn resize_bilinear<T: Scalar>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("expected [C, H, W], got {:?}", image.shape())));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!("cannot resize to {out_h}x{out_w}")));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(h, out_h);
    let cols = axis(w, out_w);
    let d = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let v = |r: usize, cc: usize| plane[r * w + cc].to_f64();
                let top = v(r0, c0) * (1.0 - fx) + v(r0, c1) * fx;
                let bottom = v(r1, c0) * (1.0 - fx) + v(r1, c1) * fx;
                out.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f32> = (0..3 * 4 * 5).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let t = Tensor::from_vec(&[3, 4, 5], data).unwrap();
        write_rgb(&p, &t).unwrap();
        assert_eq!(read_image(&p).unwrap(), t);
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_gray(&p, 3, 2, vec![0, 51, 102, 153, 204, 255]).unwrap();
        assert!(std::fs::read(&p).unwrap().starts_with(b"P5"));
        let t = read_image(&p).unwrap();
        assert_eq!(t.shape(), &[3, 2, 3]);
        for c in 0..3 {
            assert_eq!(t.data()[c * 6 + 1], 0.2);
        }
    }

    #[test]
    fn undecodable_file_is_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Image { .. })));
    }

    #[test]
    fn resize_preserves_constants_and_identity() {
        let t = Tensor::<f32>::full(&[3, 7, 5], 0.25);
        let r = resize_bilinear(&t, 4, 9).unwrap();
        assert_eq!(r.shape(), &[3, 4, 9]);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(resize_bilinear(&x, 2, 2).unwrap(), x);
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        // half-pixel centres land exactly between source pixels
        let x = Tensor::<f64>::from_vec(&[1, 1, 4], vec![0.0, 2.0, 4.0, 8.0]).unwrap();
        let r = resize_bilinear(&x, 1, 2).unwrap();
        assert_eq!(r.data(), &[1.0, 6.0]);
    }
}
