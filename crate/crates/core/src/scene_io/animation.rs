//! Bone animation manifests: `{"bones": B, "frames": [[m_0, …, m_{B−1}], …]}`
//! with every matrix given as 16 row-major reals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoneSet;
use crate::linalg::{mat4_from_row_major, mat4_to_row_major};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimationFile {
    pub bones: usize,
    pub frames: Vec<Vec<Vec<f64>>>,
}

pub fn parse_animation(text: &str, path: &Path) -> Result<BoneSet<f64>> {
    let f: AnimationFile =
        serde_json::from_str(text).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    let mut frames = Vec::with_capacity(f.frames.len());
    for (i, frame) in f.frames.iter().enumerate() {
        let mats = frame
            .iter()
            .enumerate()
            .map(|(b, m)| {
                mat4_from_row_major(m).ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("frame {i}, bone {b}: expected 16 values, got {}", m.len()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(mats);
    }
    BoneSet::new(f.bones, frames).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn load_animation(path: &Path) -> Result<BoneSet<f64>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    parse_animation(&text, path)
}

pub fn save_animation(path: &Path, bones: &BoneSet<f64>) -> Result<()> {
    let f = AnimationFile {
        bones: bones.bone_count,
        frames: bones.frames.iter().map(|fr| fr.iter().map(mat4_to_row_major).collect()).collect(),
    };
    std::fs::write(path, serde_json::to_string(&f)?)?;
    Ok(())
}
