use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParameterSet};
use crate::error::{invalid, Result};

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct SetManifest {
    name: String,
    file: String,
    len: usize,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    step: u64,
    sets: Vec<SetManifest>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Named parameter vectors stored as little-endian f64 files next to a JSON
/// manifest with names, shapes and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub sets: Vec<ParameterSet>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&ParameterSet> {
        self.sets.iter().find(|s| s.name() == name)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut sets = Vec::new();
        for set in &self.sets {
            let file = format!("{}.f64le", set.name());
            let bytes: Vec<u8> = set.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
            sets.push(SetManifest {
                name: set.name().to_string(),
                file,
                len: set.len(),
                params: set.entries().to_vec(),
            });
        }
        let manifest = Manifest {
            format: "f64-le".into(),
            step: self.step,
            sets,
            meta: self.meta.clone(),
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Accepts the checkpoint directory or the path of its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if manifest.format != "f64-le" {
            return Err(invalid(format!("unsupported checkpoint format {}", manifest.format)));
        }
        let mut sets = Vec::new();
        for s in manifest.sets {
            let bytes = fs::read(dir.join(&s.file))?;
            if bytes.len() != s.len * 8 {
                return Err(invalid(format!("{} holds {} bytes, expected {}", s.file, bytes.len(), s.len * 8)));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sets.push(ParameterSet::from_parts(s.name, s.params, values)?);
        }
        Ok(Self {
            step: manifest.step,
            sets,
            meta: manifest.meta,
        })
    }
}
