//! Volume file I/O: raw little-endian payload plus a JSON sidecar.
//!
//! `foo.raw` carries the voxel data; `foo.json` records dims, voxel
//! size, intensity range and payload dtype. 32-bit float is the native
//! payload; 8-bit is accepted on load and widened.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    voxel_size_um: [f64; 3],
    intensity_range: [f64; 2],
    #[serde(default = "default_dtype")]
    dtype: String,
}

fn default_dtype() -> String {
    "f32".to_string()
}

fn sidecar_path(raw: &Path) -> std::path::PathBuf {
    raw.with_extension("json")
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let (lo, hi) = v.min_max();
    let sidecar = Sidecar {
        dims: v.dims,
        voxel_size_um: v.voxel_size,
        intensity_range: [lo as f64, hi as f64],
        dtype: "f32".to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
    std::fs::write(sidecar_path(path), json)?;

    let mut bytes = Vec::with_capacity(v.data.len() * 4);
    for &x in &v.data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let json = std::fs::read_to_string(sidecar_path(path))?;
    let sidecar: Sidecar =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("sidecar decode: {e}")))?;
    let bytes = std::fs::read(path)?;
    let n = sidecar.dims[0] * sidecar.dims[1] * sidecar.dims[2];

    let data: Vec<f32> = match sidecar.dtype.as_str() {
        "f32" => {
            if bytes.len() != n * 4 {
                return Err(Error::Format(format!(
                    "payload is {} bytes, dims {:?} need {}",
                    bytes.len(),
                    sidecar.dims,
                    n * 4
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        "u8" => {
            if bytes.len() != n {
                return Err(Error::Format(format!(
                    "payload is {} bytes, dims {:?} need {}",
                    bytes.len(),
                    sidecar.dims,
                    n
                )));
            }
            bytes.iter().map(|&b| b as f32).collect()
        }
        other => {
            return Err(Error::Format(format!("unsupported dtype {other:?}")));
        }
    };
    Volume::from_data(sidecar.dims, sidecar.voxel_size_um, data)
}
