use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::mask::{polygon_to_mask, rle_decode, rle_encode};
use super::resize::{resize_bilinear, resize_nearest};
use super::sample::ImageSample;
use crate::error::{Error, Result};

/// One dataset record, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub image: String,
    pub expression: String,
    pub mask: MaskSpec,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum MaskSpec {
    /// List of rings of `[x, y]` vertices, even-odd fill, boundary-inclusive.
    Polygon(Vec<Vec<[f64; 2]>>),
    /// COCO-style uncompressed counts, column-major.
    Rle(Vec<usize>),
}

/// Loads a JSONL dataset and resizes every sample to `resolution`.
/// Image paths are resolved relative to the JSONL file's directory.
pub fn load_jsonl(path: &Path, resolution: usize) -> Result<Vec<ImageSample>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {lineno}: malformed record: {e}")))?;
        let (image, expression, mask) = decode_record(&record, base)
            .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        if resolution % 32 != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution} is not a multiple of 32"
            )));
        }
        let image = resize_bilinear(&image, resolution, resolution);
        let mask = resize_nearest(&mask, resolution, resolution);
        let sample = ImageSample::new(image, expression, mask)
            .map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} holds no records", path.display())));
    }
    Ok(samples)
}

/// Loads an image file into an H×W×3 array of [0, 1] floats.
pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

type DecodedRecord = (Array3<f32>, String, ndarray::Array2<u8>);

fn decode_record(record: &JsonlRecord, base: &Path) -> Result<DecodedRecord> {
    let img_path = base.join(&record.image);
    let img = image::open(&img_path)
        .map_err(|e| Error::Data(format!("missing image {}: {e}", img_path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    if (h as usize, w as usize) != (record.height, record.width) {
        return Err(Error::Data(format!(
            "image is {w}x{h} but record says {}x{}",
            record.width, record.height
        )));
    }
    let mut image = Array3::<f32>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            image[[y as usize, x as usize, c]] = p.0[c] as f32 / 255.0;
        }
    }
    let mask = match &record.mask {
        MaskSpec::Polygon(polys) => polygon_to_mask(polys, record.height, record.width)?,
        MaskSpec::Rle(counts) => rle_decode(counts, record.height, record.width)?,
    };
    if !mask.iter().any(|&v| v == 1) {
        return Err(Error::Data("decoded mask is empty".into()));
    }
    Ok((image, record.expression.clone(), mask))
}

/// Writes samples as PNGs plus a `data.jsonl` index with RLE masks.
/// Returns the index path.
pub fn write_dataset(out_dir: &Path, samples: &[ImageSample]) -> Result<std::path::PathBuf> {
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let index_path = out_dir.join("data.jsonl");
    let mut index = File::create(&index_path)?;
    for (i, s) in samples.iter().enumerate() {
        let (h, w, _) = s.image.dim();
        let name = format!("images/{i:05}.png");
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for (x, y, p) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                p.0[c] = (s.image[[y as usize, x as usize, c]] * 255.0).round() as u8;
            }
        }
        buf.save(out_dir.join(&name))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let record = JsonlRecord {
            image: name,
            expression: s.expression.clone(),
            mask: MaskSpec::Rle(rle_encode(&s.gt_mask)),
            height: h,
            width: w,
        };
        writeln!(index, "{}", serde_json::to_string(&record).unwrap())?;
    }
    Ok(index_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthConfig};

    #[test]
    fn polygon_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        // 8x8 white png
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb([255, 255, 255]));
        img.save(dir.path().join("img.png")).unwrap();
        let record = JsonlRecord {
            image: "img.png".into(),
            expression: "the square".into(),
            mask: MaskSpec::Polygon(vec![vec![[0.0, 0.0], [0.0, 4.0], [4.0, 4.0], [4.0, 0.0]]]),
            height: 8,
            width: 8,
        };
        let (_, _, mask) = decode_record(&record, dir.path()).unwrap();
        assert_eq!(mask.iter().filter(|&&v| v == 1).count(), 25);
    }

    #[test]
    fn empty_polygon_list_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb([0, 0, 0]));
        img.save(dir.path().join("img.png")).unwrap();
        let record = JsonlRecord {
            image: "img.png".into(),
            expression: "x".into(),
            mask: MaskSpec::Polygon(vec![]),
            height: 8,
            width: 8,
        };
        assert!(decode_record(&record, dir.path()).is_err());
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"nope\": 1}\n").unwrap();
        let err = load_jsonl(&path, 32).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn write_then_load_is_identity() {
        let cfg = SynthConfig {
            image_size: 64,
            seed: 11,
            ..Default::default()
        };
        let samples = generate_synthetic(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let index = write_dataset(dir.path(), &samples).unwrap();
        let loaded = load_jsonl(&index, 64).unwrap();
        assert_eq!(loaded.len(), samples.len());
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.expression, b.expression);
            assert_eq!(a.gt_mask, b.gt_mask);
            let max_diff = a
                .image
                .iter()
                .zip(b.image.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(max_diff < 1.0 / 254.0, "pixel drift {max_diff}");
        }
    }
}
