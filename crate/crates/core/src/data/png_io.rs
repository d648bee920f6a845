//! Grayscale PNG reading and writing. Phantoms are written 8-bit; real
//! LWIR exports are accepted at 8 or 16 bits.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::ThermalImage;

/// How raw integer intensities map into [0, 1] on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Per-image (v - min) / (max - min); constant images load as zeros.
    MinMax,
    /// v / type_max, radiometrically stable across frames.
    FixedRange,
}

/// Writes an 8-bit grayscale PNG.
pub fn save_gray_png8(img: &ThermalImage, path: &Path) -> Result<()> {
    let (h, w) = img.dims();
    let data: Vec<u8> = img.pixels().iter().map(|&v| (v * 255.0).round() as u8).collect();
    write_png(path, w as u32, h as u32, png::BitDepth::Eight, &data)
}

/// Writes a 16-bit grayscale PNG (big-endian sample order per the format).
pub fn save_gray_png16(img: &ThermalImage, path: &Path) -> Result<()> {
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(h * w * 2);
    for &v in img.pixels() {
        let q = (v * 65535.0).round() as u16;
        data.extend_from_slice(&q.to_be_bytes());
    }
    write_png(path, w as u32, h as u32, png::BitDepth::Sixteen, &data)
}

fn write_png(path: &Path, w: u32, h: u32, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w, h);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png { path: path.into(), reason: e.to_string() })?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Png { path: path.into(), reason: e.to_string() })
}

/// Loads an 8- or 16-bit grayscale PNG and normalizes it to [0, 1].
pub fn load_gray_png(path: &Path, mode: NormalizeMode) -> Result<ThermalImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Png { path: path.into(), reason: e.to_string() })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png { path: path.into(), reason: e.to_string() })?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Png {
            path: path.into(),
            reason: format!("expected grayscale, got {:?}", info.color_type),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let (raw, type_max): (Vec<f64>, f64) = match info.bit_depth {
        png::BitDepth::Eight => (buf[..w * h].iter().map(|&b| b as f64).collect(), 255.0),
        png::BitDepth::Sixteen => (
            buf[..w * h * 2]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
                .collect(),
            65535.0,
        ),
        other => {
            return Err(Error::Png {
                path: path.into(),
                reason: format!("unsupported bit depth {other:?}"),
            })
        }
    };

    let normalized: Vec<f64> = match mode {
        NormalizeMode::FixedRange => raw.iter().map(|&v| v / type_max).collect(),
        NormalizeMode::MinMax => {
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; raw.len()]
            }
        }
    };
    let grid = Array2::from_shape_vec((h, w), normalized)
        .map_err(|e| Error::Png { path: path.into(), reason: e.to_string() })?;
    ThermalImage::new(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn png8_round_trip_within_quantization() {
        let dir = tempdir();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let img = ThermalImage::new(Array2::from_shape_fn((20, 16), |_| rng.gen_range(0.0..1.0))).unwrap();
        let path = dir.join("a.png");
        save_gray_png8(&img, &path).unwrap();
        let back = load_gray_png(&path, NormalizeMode::FixedRange).unwrap();
        assert_eq!(back.dims(), (20, 16));
        for (a, b) in back.pixels().iter().zip(img.pixels().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn png16_round_trip_tighter() {
        let dir = tempdir();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let img = ThermalImage::new(Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.0))).unwrap();
        let path = dir.join("b.png");
        save_gray_png16(&img, &path).unwrap();
        let back = load_gray_png(&path, NormalizeMode::FixedRange).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels().iter()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn minmax_stretches_and_handles_constant() {
        let dir = tempdir();
        let img = ThermalImage::new(Array2::from_shape_fn((4, 4), |(y, x)| {
            0.25 + 0.25 * ((y * 4 + x) as f64 / 15.0)
        }))
        .unwrap();
        let path = dir.join("c.png");
        save_gray_png8(&img, &path).unwrap();
        let back = load_gray_png(&path, NormalizeMode::MinMax).unwrap();
        let lo = back.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = back.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);

        let flat = ThermalImage::constant(4, 4, 0.5).unwrap();
        let path = dir.join("d.png");
        save_gray_png8(&flat, &path).unwrap();
        let back = load_gray_png(&path, NormalizeMode::MinMax).unwrap();
        assert!(back.pixels().iter().all(|&v| v == 0.0));
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("thermopose-png-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
