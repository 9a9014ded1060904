//! Image IO: 8-bit RGB PNG for interchange plus binary PPM (P6) as a
//! zero-dependency fallback. The container is picked by file extension.
//!
//! Decoding maps channel values v/255 into [0, 1]; writing quantizes by
//! round(v*255) with clamping, so a write-then-read round trip is exact to
//! 1/255 per channel. Grayscale inputs are replicated to three channels;
//! alpha channels are dropped.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn decode_err(path: &Path, reason: impl ToString) -> Error {
    Error::ImageDecode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// True for file names this crate treats as images.
pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "ppm"
    )
}

/// Interleaved RGB8 plus dimensions; the common decode target.
pub(crate) struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub(crate) fn decode_rgb8(path: &Path) -> Result<Rgb8> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("ppm") => decode_ppm(path),
        Some("png") => decode_png(path),
        other => Err(decode_err(
            path,
            format!("unsupported container {:?} (expected png or ppm)", other),
        )),
    }
}

fn decode_png(path: &Path) -> Result<Rgb8> {
    let img = image::open(path).map_err(|e| decode_err(path, e))?;
    let rgb = img.to_rgb8();
    Ok(Rgb8 {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        pixels: rgb.into_raw(),
    })
}

fn decode_ppm(path: &Path) -> Result<Rgb8> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(decode_err(path, "not a binary PPM (P6) file"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad PPM width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad PPM height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err(path, "bad PPM maxval"))?;
    if maxval != 255 {
        return Err(decode_err(path, format!("unsupported PPM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(decode_err(
            path,
            format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos)),
        ));
    }
    Ok(Rgb8 {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub(crate) fn rgb8_to_tensor(img: &Rgb8) -> Tensor {
    let (h, w) = (img.height, img.width);
    let mut t = Tensor::zeros(1, 3, h, w);
    let data = t.data_mut();
    for (i, px) in img.pixels.chunks_exact(3).enumerate() {
        data[i] = px[0] as f32 / 255.0;
        data[h * w + i] = px[1] as f32 / 255.0;
        data[2 * h * w + i] = px[2] as f32 / 255.0;
    }
    t
}

/// Planar CHW u8 buffer to interleaved RGB8.
pub(crate) fn chw_u8_to_rgb8(chw: &[u8], h: usize, w: usize) -> Vec<u8> {
    let plane = h * w;
    let mut out = vec![0u8; plane * 3];
    for i in 0..plane {
        out[3 * i] = chw[i];
        out[3 * i + 1] = chw[plane + i];
        out[3 * i + 2] = chw[2 * plane + i];
    }
    out
}

pub(crate) fn quantize_channel(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub(crate) fn tensor_to_rgb8(t: &Tensor) -> Rgb8 {
    let [n, c, h, w] = t.shape();
    assert_eq!((n, c), (1, 3), "tensor_to_rgb8 expects a single RGB image");
    let plane = h * w;
    let data = t.data();
    let mut pixels = vec![0u8; plane * 3];
    for i in 0..plane {
        pixels[3 * i] = quantize_channel(data[i]);
        pixels[3 * i + 1] = quantize_channel(data[plane + i]);
        pixels[3 * i + 2] = quantize_channel(data[2 * plane + i]);
    }
    Rgb8 {
        width: w,
        height: h,
        pixels,
    }
}

pub(crate) fn encode_rgb8(img: &Rgb8, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("ppm") => {
            let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let header = format!("P6\n{} {}\n255\n", img.width, img.height);
            f.write_all(header.as_bytes())
                .and_then(|_| f.write_all(&img.pixels))
                .map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let buf: image::RgbImage = image::ImageBuffer::from_raw(
                img.width as u32,
                img.height as u32,
                img.pixels.clone(),
            )
            .expect("pixel buffer matches dimensions");
            buf.save(path).map_err(|e| decode_err(path, e))
        }
        other => Err(decode_err(
            path,
            format!("unsupported output container {:?} (expected png or ppm)", other),
        )),
    }
}

/// Reads an image file into a [1, 3, H, W] tensor with values in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_rgb8(path.as_ref()).map(|img| rgb8_to_tensor(&img))
}

/// Quantizes a [1, 3, H, W] tensor and writes it as PNG or PPM by extension.
pub fn write_image(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let [n, c, _, _] = tensor.shape();
    if (n, c) != (1, 3) {
        return Err(Error::ShapeMismatch {
            op: "write_image",
            dim: "tensor shape",
            expected: "[1, 3, H, W]".into(),
            actual: format!("{:?}", tensor.shape()),
        });
    }
    encode_rgb8(&tensor_to_rgb8(tensor), path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = Rgb8 {
            width: 3,
            height: 2,
            pixels: (0..18).map(|i| (i * 13 % 256) as u8).collect(),
        };
        encode_rgb8(&img, &path).unwrap();
        let back = decode_rgb8(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Rgb8 {
            width: 4,
            height: 4,
            pixels: (0..48).map(|i| (i * 7 % 256) as u8).collect(),
        };
        encode_rgb8(&img, &path).unwrap();
        let back = decode_rgb8(&path).unwrap();
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn write_then_read_error_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let vals: Vec<f32> = (0..27).map(|i| i as f32 / 26.0).collect();
        let t = Tensor::from_vec([1, 3, 3, 3], vals).unwrap();
        write_image(&t, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn black_file_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.ppm");
        encode_rgb8(
            &Rgb8 {
                width: 2,
                height: 2,
                pixels: vec![0; 12],
            },
            &path,
        )
        .unwrap();
        let t = load_image(&path).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grayscale_png_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let gray = image::GrayImage::from_fn(3, 3, |x, y| image::Luma([(x * 40 + y * 10) as u8]));
        gray.save(&path).unwrap();
        let t = load_image(&path).unwrap();
        let plane = 9;
        for i in 0..plane {
            assert_eq!(t.data()[i], t.data()[plane + i]);
            assert_eq!(t.data()[i], t.data()[2 * plane + i]);
        }
    }

    #[test]
    fn truncated_ppm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nabc").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, Error::ImageDecode { .. }));
    }

    #[test]
    fn undecodable_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }
}
