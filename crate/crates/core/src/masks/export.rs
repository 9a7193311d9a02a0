use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_pgm;
use crate::mask::MaskSequence;
use crate::types::SequenceMeta;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame: u32,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub sequence: String,
    pub object: u32,
    pub width: u32,
    pub height: u32,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn mask_file_name(frame: u32) -> String {
    format!("frame_{frame:06}.pgm")
}

/// Writes one PGM per masked frame plus `manifest.json` into `dir`.
pub fn export_training_set(
    masks: &MaskSequence,
    meta: &SequenceMeta,
    dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    if masks.width != meta.image_width || masks.height != meta.image_height {
        return Err(Error::validation(
            "masks",
            format!(
                "{}x{} masks for a {}x{} sequence",
                masks.width, masks.height, meta.image_width, meta.image_height
            ),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(masks.len());
    for &frame in masks.frames.keys() {
        let name = mask_file_name(frame);
        let mask = masks.mask(frame)?.expect("frame key present");
        write_pgm(&mask, dir.join(&name))?;
        entries.push(ManifestEntry { frame, mask: name });
    }
    let manifest = Manifest {
        sequence: masks.sequence_id.clone(),
        object: masks.object_id,
        width: masks.width,
        height: masks.height,
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
