use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tensor::Tensor;

use super::{Dataset, PatientSample};
use crate::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::vtt::EhrRecord;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: u8,
    pub ehr: EhrRecord,
    pub volume_file: String,
    pub mask_file: String,
}

/// `volume_<id>.f32raw` holds little-endian f32 voxels, `mask_<id>.u8raw` one byte per voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorConfig,
    pub volume_shape: [usize; 3],
    pub samples: Vec<ManifestEntry>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = data.config.volume_side;
    let mut entries = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let volume_file = format!("volume_{}.f32raw", s.id);
        let mask_file = format!("mask_{}.u8raw", s.id);
        let vbytes: Vec<u8> = s.volume.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        let mbytes: Vec<u8> = s.mask.data().iter().map(|&v| (v > 0.5) as u8).collect();
        let vp = dir.join(&volume_file);
        fs::write(&vp, vbytes).map_err(|e| Error::io(&vp, e))?;
        let mp = dir.join(&mask_file);
        fs::write(&mp, mbytes).map_err(|e| Error::io(&mp, e))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: s.label as u8,
            ehr: s.ehr.clone(),
            volume_file,
            mask_file,
        });
    }
    let manifest = Manifest {
        generator: data.config.clone(),
        volume_shape: [g, g, g],
        samples: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let shape = manifest.volume_shape;
    let n: usize = shape.iter().product();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in manifest.samples {
        let vp = dir.join(&e.volume_file);
        let vbytes = fs::read(&vp).map_err(|err| Error::io(&vp, err))?;
        if vbytes.len() != 4 * n {
            return Err(Error::Data(format!(
                "{}: {} bytes, expected {} for shape {shape:?}",
                vp.display(),
                vbytes.len(),
                4 * n
            )));
        }
        let volume: Vec<f64> = vbytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mp = dir.join(&e.mask_file);
        let mbytes = fs::read(&mp).map_err(|err| Error::io(&mp, err))?;
        if mbytes.len() != n || mbytes.iter().any(|&b| b > 1) {
            return Err(Error::Data(format!("{}: expected {n} bytes of 0/1", mp.display())));
        }
        if e.label > 1 {
            return Err(Error::Data(format!("sample {}: label {} is not 0/1", e.id, e.label)));
        }
        e.ehr.validate().map_err(|err| Error::Data(format!("sample {}: {err}", e.id)))?;
        samples.push(PatientSample {
            id: e.id,
            volume: Tensor::new(&shape, volume)?,
            mask: Tensor::new(&shape, mbytes.iter().map(|&b| b as f64).collect())?,
            ehr: e.ehr,
            label: e.label == 1,
        });
    }
    Ok(Dataset { config: manifest.generator, samples })
}
