//! Image file I/O, bilinear resizing, and the conversion between 8-bit
//! display pixels and the network's mean-subtracted input volumes.
//!
//! The mean pixel and channel order are properties of the converted weight
//! file (they travel in the container manifest), so [`PixelMeta`] carries
//! them as data instead of hard-coding constants.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use crate::container::Manifest;
use crate::tensor::ActivationVolume;

#[derive(Debug)]
pub enum ImagingError {
    Io { path: String, message: String },
    Decode { path: String, message: String },
    Encode { path: String, message: String },
    BadChannelOrder(String),
}

impl fmt::Display for ImagingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImagingError::Io { path, message } => write!(f, "{path}: {message}"),
            ImagingError::Decode { path, message } => write!(f, "cannot decode {path}: {message}"),
            ImagingError::Encode { path, message } => write!(f, "cannot encode {path}: {message}"),
            ImagingError::BadChannelOrder(order) => {
                write!(
                    f,
                    "unsupported channel order {order:?} (expected \"rgb\" or \"bgr\")"
                )
            }
        }
    }
}

impl std::error::Error for ImagingError {}

/// 8-bit RGB image, interleaved row-major (`(y * width + x) * 3 + c`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Decode a PNG or JPEG file to RGB. Alpha is discarded by compositing
/// over white; grayscale is replicated across the three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<PixelImage, ImagingError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| ImagingError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| ImagingError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for px in rgba.pixels() {
        let alpha = px.0[3] as f64 / 255.0;
        for c in 0..3 {
            let v = px.0[c] as f64 * alpha + 255.0 * (1.0 - alpha);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(PixelImage::new(w, h, data))
}

/// Write a PNG file.
pub fn save_png(path: impl AsRef<Path>, img: &PixelImage) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let buffer = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("buffer length matches dimensions");
    let mut bytes = Vec::new();
    buffer
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| ImagingError::Encode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    std::fs::write(path, bytes).map_err(|e| ImagingError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Bilinear resampling of one `f64` plane (row-major `y * width + x`) with
/// half-pixel centers and edge-clamped sampling.
pub fn resize_plane_bilinear(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h);
    assert!(dst_w >= 1 && dst_h >= 1);
    let scale_x = src_w as f64 / dst_w as f64;
    let scale_y = src_h as f64 / dst_h as f64;
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for dy in 0..dst_h {
        let sy = (dy as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = (y0 as i64).clamp(0, src_h as i64 - 1) as usize;
        let y1c = (y0 as i64 + 1).clamp(0, src_h as i64 - 1) as usize;
        for dx in 0..dst_w {
            let sx = (dx as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = (x0 as i64).clamp(0, src_w as i64 - 1) as usize;
            let x1c = (x0 as i64 + 1).clamp(0, src_w as i64 - 1) as usize;
            let top = src[y0c * src_w + x0c] * (1.0 - fx) + src[y0c * src_w + x1c] * fx;
            let bottom = src[y1c * src_w + x0c] * (1.0 - fx) + src[y1c * src_w + x1c] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Bilinear resize of an 8-bit image.
pub fn resize_bilinear(img: &PixelImage, width: usize, height: usize) -> PixelImage {
    assert!(width >= 1 && height >= 1);
    if width == img.width && height == img.height {
        return img.clone();
    }
    let mut planes = [Vec::new(), Vec::new(), Vec::new()];
    for (c, resized) in planes.iter_mut().enumerate() {
        let plane: Vec<f64> = img
            .data
            .iter()
            .skip(c)
            .step_by(3)
            .map(|v| *v as f64)
            .collect();
        *resized = resize_plane_bilinear(&plane, img.width, img.height, width, height);
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for i in 0..width * height {
        for plane in &planes {
            data.push(plane[i].round().clamp(0.0, 255.0) as u8);
        }
    }
    PixelImage::new(width, height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Pixel conversion convention of a converted weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMeta {
    /// Mean pixel in container channel order, subtracted on the way in.
    pub mean_pixel: [f64; 3],
    pub channel_order: ChannelOrder,
}

impl PixelMeta {
    /// Convention of the published normalized VGG-19 conversion.
    pub fn normalized_vgg_default() -> Self {
        Self {
            mean_pixel: [104.006, 116.669, 122.679],
            channel_order: ChannelOrder::Bgr,
        }
    }

    pub fn from_manifest(manifest: &Manifest) -> Result<Self, ImagingError> {
        let channel_order = match manifest.channel_order.as_str() {
            "rgb" => ChannelOrder::Rgb,
            "bgr" => ChannelOrder::Bgr,
            other => return Err(ImagingError::BadChannelOrder(other.to_string())),
        };
        Ok(Self {
            mean_pixel: manifest.mean_pixel,
            channel_order,
        })
    }

    /// For volume channel `c`, the RGB index it reads from.
    fn source_channel(&self, c: usize) -> usize {
        match self.channel_order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        }
    }
}

/// Convert display pixels to the network input volume: reorder channels to
/// the container convention and subtract the mean pixel.
pub fn preprocess(img: &PixelImage, meta: &PixelMeta) -> ActivationVolume {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0f64; 3 * w * h];
    for c in 0..3 {
        let src_c = meta.source_channel(c);
        let mean = meta.mean_pixel[c];
        let plane = &mut data[c * w * h..(c + 1) * w * h];
        for x in 0..w {
            for y in 0..h {
                plane[x * h + y] = img.data[(y * w + x) * 3 + src_c] as f64 - mean;
            }
        }
    }
    ActivationVolume::new(3, w, h, data).expect("pixel values are finite")
}

/// Invert [`preprocess`]: add the mean back, restore RGB order, clamp to
/// the displayable range and round.
pub fn deprocess(volume: &ActivationVolume, meta: &PixelMeta) -> PixelImage {
    assert_eq!(volume.channels(), 3);
    let (w, h) = (volume.width(), volume.height());
    let mut data = vec![0u8; w * h * 3];
    for c in 0..3 {
        let dst_c = meta.source_channel(c);
        let mean = meta.mean_pixel[c];
        for x in 0..w {
            for y in 0..h {
                let v = (volume.get(c, x, y) + mean).round().clamp(0.0, 255.0);
                data[(y * w + x) * 3 + dst_c] = v as u8;
            }
        }
    }
    PixelImage::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("stylegram-test-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn png_round_trip_single_red_pixel() {
        let img = PixelImage::filled(1, 1, [255, 0, 0]);
        let path = temp_path("red.png");
        save_png(&path, &img).unwrap();
        let loaded = load_image(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded, img);
    }

    #[test]
    fn grayscale_promotes_to_three_channels() {
        let path = temp_path("gray.png");
        let gray = image::GrayImage::from_raw(2, 1, vec![10, 200]).unwrap();
        gray.save(&path).unwrap();
        let loaded = load_image(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.pixel(0, 0), [10, 10, 10]);
        assert_eq!(loaded.pixel(1, 0), [200, 200, 200]);
    }

    #[test]
    fn alpha_composites_over_white() {
        let path = temp_path("alpha.png");
        let rgba = image::RgbaImage::from_raw(1, 1, vec![0, 0, 0, 0]).unwrap();
        rgba.save(&path).unwrap();
        let loaded = load_image(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.pixel(0, 0), [255, 255, 255]);
    }

    #[test]
    fn truncated_file_fails_decode() {
        let img = PixelImage::filled(4, 4, [1, 2, 3]);
        let path = temp_path("trunc.png");
        save_png(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_image(&path);
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Err(ImagingError::Decode { .. })));
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = load_image("/definitely/not/here.png").unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.png"));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = PixelImage::new(2, 2, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        assert_eq!(resize_bilinear(&img, 2, 2), img);
    }

    #[test]
    fn resize_ramp_is_monotone() {
        // 2x1 black/white upsampled to 4x1
        let img = PixelImage::new(2, 1, vec![0, 0, 0, 255, 255, 255]);
        let out = resize_bilinear(&img, 4, 1);
        let reds: Vec<u8> = (0..4).map(|x| out.pixel(x, 0)[0]).collect();
        assert_eq!(reds, vec![0, 64, 191, 255]);
        assert!(reds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_preserves_constant() {
        let img = PixelImage::filled(3, 5, [42, 17, 200]);
        for (w, h) in [(1, 1), (7, 2), (10, 10)] {
            let out = resize_bilinear(&img, w, h);
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(out.pixel(x, y), [42, 17, 200]);
                }
            }
        }
    }

    #[test]
    fn resize_plane_is_linear() {
        let mut rng = crate::rng::SplitMix64::new(5);
        let a: Vec<f64> = (0..35).map(|_| rng.next_range(0.0, 255.0)).collect();
        let b: Vec<f64> = (0..35).map(|_| rng.next_range(0.0, 255.0)).collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * x + 2.0 * y).collect();
        let ra = resize_plane_bilinear(&a, 7, 5, 11, 3);
        let rb = resize_plane_bilinear(&b, 7, 5, 11, 3);
        let rc = resize_plane_bilinear(&combo, 7, 5, 11, 3);
        for i in 0..rc.len() {
            let expect = 0.5 * ra[i] + 2.0 * rb[i];
            assert!((rc[i] - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn preprocess_of_mean_colored_image_is_zero() {
        // integer-valued mean so an 8-bit image can hit it exactly
        let meta = PixelMeta {
            mean_pixel: [100.0, 110.0, 120.0],
            channel_order: ChannelOrder::Bgr,
        };
        // bgr order: volume channel 0 reads B, 1 reads G, 2 reads R
        let img = PixelImage::filled(4, 4, [120, 110, 100]);
        let volume = preprocess(&img, &meta);
        assert!(volume.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deprocess_inverts_preprocess_for_in_gamut_images() {
        let meta = PixelMeta::normalized_vgg_default();
        let mut rng = crate::rng::SplitMix64::new(9);
        let data: Vec<u8> = (0..4 * 3 * 3)
            .map(|_| (rng.next_u64() % 256) as u8)
            .collect();
        let img = PixelImage::new(4, 3, data);
        let round = deprocess(&preprocess(&img, &meta), &meta);
        assert_eq!(round, img);
    }

    #[test]
    fn out_of_gamut_clamps_without_wraparound() {
        let meta = PixelMeta::normalized_vgg_default();
        let volume = ActivationVolume::new(3, 1, 1, vec![1e4, -1e4, 0.0]).unwrap();
        let img = deprocess(&volume, &meta);
        // channel 0 (B) saturates high, channel 1 (G) saturates low
        assert_eq!(img.pixel(0, 0)[2], 255);
        assert_eq!(img.pixel(0, 0)[1], 0);
    }

    #[test]
    fn export_is_idempotent() {
        let meta = PixelMeta::normalized_vgg_default();
        let mut rng = crate::rng::SplitMix64::new(13);
        let data: Vec<f64> = (0..3 * 4 * 4)
            .map(|_| rng.next_range(-400.0, 400.0))
            .collect();
        let volume = ActivationVolume::new(3, 4, 4, data).unwrap();
        let once = preprocess(&deprocess(&volume, &meta), &meta);
        let twice = preprocess(&deprocess(&once, &meta), &meta);
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn manifest_meta_parses_channel_order() {
        let manifest: Manifest = serde_json::from_str(
            r#"{"channel_order": "rgb", "mean_pixel": [1.0, 2.0, 3.0], "entries": []}"#,
        )
        .unwrap();
        let meta = PixelMeta::from_manifest(&manifest).unwrap();
        assert_eq!(meta.channel_order, ChannelOrder::Rgb);
        let manifest: Manifest =
            serde_json::from_str(r#"{"channel_order": "yuv", "entries": []}"#).unwrap();
        assert!(PixelMeta::from_manifest(&manifest).is_err());
    }
}
