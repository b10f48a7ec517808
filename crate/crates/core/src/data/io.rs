//! On-disk layout: `mod0/ … mod{M-1}/<specimen_id>.png` plus `manifest.json`.

use std::fs;
use std::path::Path;

use image::{ExtendedColorType, ImageFormat};

use super::{Dataset, DatasetManifest, Image, MultimodalSample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_EXT: &str = "png";

fn color_type(channels: usize) -> Result<ExtendedColorType> {
    match channels {
        1 => Ok(ExtendedColorType::L8),
        3 => Ok(ExtendedColorType::Rgb8),
        4 => Ok(ExtendedColorType::Rgba8),
        c => Err(Error::InvalidArgument(format!(
            "PNG layout supports 1, 3 or 4 channels, got {c}"
        ))),
    }
}

fn to_interleaved(img: &Image) -> Vec<u8> {
    let plane = img.side * img.side;
    let mut out = Vec::with_capacity(img.data.len());
    for p in 0..plane {
        for c in 0..img.channels {
            out.push((img.data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

fn from_interleaved(bytes: &[u8], channels: usize, side: usize) -> Result<Image> {
    let plane = side * side;
    if bytes.len() != plane * channels {
        return Err(Error::shape(plane * channels, bytes.len()));
    }
    let mut data = vec![0f32; bytes.len()];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = bytes[p * channels + c] as f32 / 255.0;
        }
    }
    Image::new(channels, side, data)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, force: bool) -> Result<()> {
    let spec = dataset.spec();
    let color = color_type(spec.channels_per_modality)?;
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(Error::NotEmpty(dir.to_path_buf()));
        }
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if path.is_dir() && name.starts_with("mod") {
                fs::remove_dir_all(&path)?;
            } else if name == MANIFEST_FILE {
                fs::remove_file(&path)?;
            }
        }
    }
    for m in 0..spec.n_modalities {
        fs::create_dir_all(dir.join(format!("mod{m}")))?;
    }
    for sample in dataset.samples() {
        for (m, img) in sample.images.iter().enumerate() {
            let path = dir
                .join(format!("mod{m}"))
                .join(format!("{}.{IMAGE_EXT}", sample.specimen_id));
            image::save_buffer_with_format(
                &path,
                &to_interleaved(img),
                img.side as u32,
                img.side as u32,
                color,
                ImageFormat::Png,
            )?;
        }
    }
    let manifest = serde_json::to_string_pretty(dataset.manifest())?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let spec = manifest.modality_spec;
    spec.validate()?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let mut images = Vec::with_capacity(spec.n_modalities);
        for m in 0..spec.n_modalities {
            let path = dir
                .join(format!("mod{m}"))
                .join(format!("{}.{IMAGE_EXT}", rec.specimen_id));
            let decoded = image::open(&path)?;
            if decoded.width() as usize != spec.image_side
                || decoded.height() as usize != spec.image_side
            {
                return Err(Error::shape(
                    format!("{0}x{0}", spec.image_side),
                    format!("{}x{} in {}", decoded.width(), decoded.height(), path.display()),
                ));
            }
            let bytes = match spec.channels_per_modality {
                1 => decoded.into_luma8().into_raw(),
                3 => decoded.into_rgb8().into_raw(),
                4 => decoded.into_rgba8().into_raw(),
                c => return Err(color_type(c).unwrap_err()),
            };
            images.push(from_interleaved(&bytes, spec.channels_per_modality, spec.image_side)?);
        }
        samples.push(MultimodalSample {
            images,
            label: rec.label,
            specimen_id: rec.specimen_id.clone(),
        });
    }
    Dataset::new(manifest, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, ModalitySpec, SynthConfig};

    fn small(channels: usize) -> Dataset {
        generate_synthetic_dataset(&SynthConfig {
            n_samples: 9,
            class_ratios: vec![0.6, 0.4],
            class_names: vec!["x".into(), "y".into()],
            spec: ModalitySpec::new(3, channels, 5).unwrap(),
            informativeness: vec![0.8; 3],
            noise_std: 0.2,
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        for channels in [1, 3] {
            let ds = small(channels);
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &ds, false).unwrap();
            assert!(dir.path().join("mod2").join("s00000.png").exists());
            let back = read_dataset(dir.path()).unwrap();
            assert_eq!(back.samples(), ds.samples());
            assert_eq!(back.manifest(), ds.manifest());
        }
    }

    #[test]
    fn refuses_non_empty_target_without_force() {
        let ds = small(3);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, false).unwrap();
        assert!(matches!(
            write_dataset(dir.path(), &ds, false),
            Err(Error::NotEmpty(_))
        ));
        write_dataset(dir.path(), &ds, true).unwrap();
    }

    #[test]
    fn unsupported_channel_count() {
        let ds = small(2);
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(dir.path(), &ds, false).is_err());
    }
}
