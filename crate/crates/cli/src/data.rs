//! Dataset directories: `vol_NNNN.vlm` volumes paired with `lmk_NNNN.json`
//! landmark files.

use std::fs;
use std::path::{Path, PathBuf};

use brainmark_core::landmarks::{read_landmarks, write_landmarks};
use brainmark_core::volume::{read_volume, write_volume};
use brainmark_core::{LandmarkSet, Volume3};

use crate::Failure;

pub fn volume_name(i: usize) -> String {
    format!("vol_{i:04}.vlm")
}

pub fn landmark_name(i: usize) -> String {
    format!("lmk_{i:04}.json")
}

pub fn chain_name(i: usize) -> String {
    format!("chain_{i:04}.json")
}

/// Sample indices present in `dir`, ascending.
pub fn indices(dir: &Path) -> Result<Vec<usize>, Failure> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let name = entry.map_err(|e| Failure::Data(e.to_string()))?.file_name();
        let name = name.to_string_lossy();
        if let Some(i) = name.strip_prefix("vol_").and_then(|s| s.strip_suffix(".vlm")).and_then(|s| s.parse().ok()) {
            out.push(i);
        }
    }
    out.sort_unstable();
    if out.is_empty() {
        return Err(Failure::Data(format!("no vol_NNNN.vlm files in {}", dir.display())));
    }
    Ok(out)
}

pub fn load_pair(dir: &Path, i: usize) -> Result<(Volume3, LandmarkSet), Failure> {
    let v = read_volume(dir.join(volume_name(i)))?;
    let l = read_landmarks(dir.join(landmark_name(i)), v.dims())?;
    Ok((v, l))
}

pub fn load_dir(dir: &Path) -> Result<Vec<(usize, Volume3, LandmarkSet)>, Failure> {
    indices(dir)?
        .into_iter()
        .map(|i| load_pair(dir, i).map(|(v, l)| (i, v, l)))
        .collect()
}

pub fn save_pair(dir: &Path, i: usize, v: &Volume3, l: &LandmarkSet) -> Result<(), Failure> {
    write_volume(v, dir.join(volume_name(i)))?;
    write_landmarks(l, v.dims(), dir.join(landmark_name(i)))?;
    Ok(())
}

/// Landmark JSON files in `dir` (augmentation sidecars excluded), by name.
pub fn landmark_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::Data(e.to_string()))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".json") && !name.starts_with("chain_") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
