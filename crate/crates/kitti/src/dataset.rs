//! Result-directory layout: one `<6-digit frame id>.txt` file per frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{KittiError, Result};
use crate::label::{parse_label_bytes, write_result_file, KittiObjectLabel};

pub fn frame_file_name(frame: u32) -> String {
    format!("{frame:06}.txt")
}

fn frame_id(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    if path.extension()? != "txt" || stem.len() != 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_label_path(path: &Path) -> Result<Vec<KittiObjectLabel>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_label_bytes(&bytes).map_err(|e| e.in_file(path))
}

/// Reads every `NNNNNN.txt` file in `dir`, keyed by frame id.
/// Other files are ignored.
pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<u32, Vec<KittiObjectLabel>>> {
    if !dir.is_dir() {
        return Err(KittiError::MissingDir(dir.to_path_buf()));
    }
    let mut frames = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if let Some(id) = frame_id(&path) {
            frames.insert(id, read_label_path(&path)?);
        }
    }
    Ok(frames)
}

/// Detections aligned to the ground-truth frames; a missing detection file
/// means no detections for that frame. Detection lines without a score get 1.0.
pub fn read_detections_for(
    dir: &Path,
    frames: impl IntoIterator<Item = u32>,
) -> Result<Vec<Vec<KittiObjectLabel>>> {
    if !dir.is_dir() {
        return Err(KittiError::MissingDir(dir.to_path_buf()));
    }
    frames
        .into_iter()
        .map(|id| {
            let path = dir.join(frame_file_name(id));
            if !path.exists() {
                return Ok(Vec::new());
            }
            let mut dets = read_label_path(&path)?;
            for d in &mut dets {
                d.score.get_or_insert(1.0);
            }
            Ok(dets)
        })
        .collect()
}

/// Writes one result file per frame and returns the written paths.
pub fn write_result_dir(
    dir: &Path,
    frames: &BTreeMap<u32, Vec<KittiObjectLabel>>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(frames.len());
    for (&id, labels) in frames {
        let path = dir.join(frame_file_name(id));
        let text = write_result_file(labels)?;
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
