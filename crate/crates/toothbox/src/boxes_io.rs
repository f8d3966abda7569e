//! Boxes output: `{"boxes": [{"id", "label", "fdi", "vox": {..}, "mm": {..},
//! "detections", "divided_from"}, ...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use toothbox_core::reconstruct::Box3D;

use crate::volume_io::{read_json, write_json};
use crate::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxesFile {
    pub boxes: Vec<Box3D>,
}

pub fn save_boxes(boxes: &[Box3D], path: &Path) -> Result<(), IoError> {
    write_json(path, &BoxesFile { boxes: boxes.to_vec() })
}

pub fn load_boxes(path: &Path) -> Result<Vec<Box3D>, IoError> {
    Ok(read_json::<BoxesFile>(path)?.boxes)
}

/// Undoes a division in box space: children sharing a `divided_from` parent
/// are replaced by their hull under the parent's id. Boxes that were never
/// divided pass through. Used to rebuild the pre-division view when only
/// divided boxes are on disk.
pub fn merge_divided(boxes: &[Box3D]) -> Vec<Box3D> {
    use std::collections::BTreeMap;
    let mut merged: BTreeMap<u32, Box3D> = BTreeMap::new();
    let mut order: Vec<u32> = Vec::new();

    for b in boxes {
        let key = b.divided_from.unwrap_or(b.id);
        match merged.get_mut(&key) {
            None => {
                let mut parent = b.clone();
                if b.divided_from.is_some() {
                    parent.id = key;
                    parent.divided_from = None;
                    parent.fdi = None;
                }
                merged.insert(key, parent);
                order.push(key);
            }
            Some(parent) => {
                parent.vox.x_min = parent.vox.x_min.min(b.vox.x_min);
                parent.vox.y_min = parent.vox.y_min.min(b.vox.y_min);
                parent.vox.z_min = parent.vox.z_min.min(b.vox.z_min);
                parent.vox.x_max = parent.vox.x_max.max(b.vox.x_max);
                parent.vox.y_max = parent.vox.y_max.max(b.vox.y_max);
                parent.vox.z_max = parent.vox.z_max.max(b.vox.z_max);
                parent.mm.x_min = parent.mm.x_min.min(b.mm.x_min);
                parent.mm.y_min = parent.mm.y_min.min(b.mm.y_min);
                parent.mm.z_min = parent.mm.z_min.min(b.mm.z_min);
                parent.mm.x_max = parent.mm.x_max.max(b.mm.x_max);
                parent.mm.y_max = parent.mm.y_max.max(b.mm.y_max);
                parent.mm.z_max = parent.mm.z_max.max(b.mm.z_max);
            }
        }
    }
    order.into_iter().map(|k| merged.remove(&k).expect("key present")).collect()
}
