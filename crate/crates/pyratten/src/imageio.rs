//! 8-bit PNG image I/O (grayscale or RGB, no alpha) and conversions to and
//! from the tensor value range.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};
use std::path::Path;

/// 8-bit image, row-major, RGB order for 3-channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Interleaved samples, `width * height * channels` long.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dim(format!(
                "sample count {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Planar (1, C, H, W) tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0.0 as Elem; w * h * c];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(ci * h + y) * w + x] =
                        self.data[(y * w + x) * c + ci] as Elem / 255.0;
                }
            }
        }
        Tensor::from_vec([1, c, h, w], data).expect("consistent extents")
    }

    /// Quantizes a (1, C, H, W) tensor in [0, 1] back to 8 bits, clamping.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || (c != 1 && c != 3) {
            return Err(Error::Dim(format!(
                "expected a (1, 1|3, H, W) tensor, got {:?}",
                t.shape()
            )));
        }
        let mut data = vec![0u8; w * h * c];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = t.at(0, ci, y, x).clamp(0.0, 1.0);
                    data[(y * w + x) * c + ci] = (v * 255.0).round() as u8;
                }
            }
        }
        Image::new(w, h, c, data)
    }
}

/// Loads an 8-bit, non-interlaced grayscale or RGB PNG.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    match decoded {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            Image::new(w, h, 1, img.into_raw())
        }
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            Image::new(w, h, 3, img.into_raw())
        }
        image::DynamicImage::ImageLuma16(_) | image::DynamicImage::ImageRgb16(_) => Err(
            Error::format(path, "16-bit PNGs are not supported (8-bit only)"),
        ),
        image::DynamicImage::ImageLumaA8(_)
        | image::DynamicImage::ImageRgba8(_)
        | image::DynamicImage::ImageLumaA16(_)
        | image::DynamicImage::ImageRgba16(_) => Err(Error::format(
            path,
            "alpha channels are not supported (gray or RGB only)",
        )),
        other => Err(Error::format(
            path,
            format!("unsupported color type {:?}", other.color()),
        )),
    }
}

/// Writes an image as an 8-bit PNG; the round trip with [`load_png`] is
/// bit-exact.
pub fn save_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Config(format!("cannot encode {c}-channel image"))),
    };
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = Rng::seed_from(seed);
        let data = (0..w * h * c).map(|_| rng.below(256) as u8).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn png_roundtrip_is_bit_exact_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let img = random_image(8, 8, 3, 1);
        save_png(&path, &img).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn grayscale_loads_as_one_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = random_image(5, 7, 1, 2);
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels, 1);
        assert_eq!(back, img);
    }

    #[test]
    fn sixteen_bit_png_is_a_format_error_naming_the_depth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_pixel(
            4,
            4,
            image::Luma([40_000u16]),
        );
        img.save_with_format(&path, image::ImageFormat::Png).unwrap();
        match load_png(&path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("16-bit"), "{reason}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alpha.png");
        let img = image::ImageBuffer::<image::Rgba<u8>, Vec<u8>>::from_pixel(
            4,
            4,
            image::Rgba([1, 2, 3, 4]),
        );
        img.save_with_format(&path, image::ImageFormat::Png).unwrap();
        assert!(matches!(load_png(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_png("/nonexistent/nowhere.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn tensor_roundtrip_preserves_samples() {
        let img = random_image(6, 4, 3, 3);
        let t = img.to_tensor();
        assert_eq!(t.shape(), [1, 3, 4, 6]);
        let back = Image::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }
}
