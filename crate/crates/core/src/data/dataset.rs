//! Calibrated image collections and their JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::{Camera, Split};
use super::image::Image;
use super::DataError;
use crate::geometry::SceneBounds;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub bounds: SceneBounds<f64>,
    /// Fill color behind the last sample when rendering.
    pub background: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    bounds: SceneBounds<f64>,
    background: [f64; 3],
    cameras: Vec<Camera>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.cameras.is_empty() {
            return Err(DataError::Spec("no cameras".into()));
        }
        if self.cameras.len() != self.images.len() {
            return Err(DataError::Manifest(format!("{} cameras but {} images", self.cameras.len(), self.images.len())));
        }
        self.bounds.validate().map_err(|e| DataError::Manifest(e.to_string()))?;
        let mut next = 0;
        for (cam, img) in self.cameras.iter().zip(&self.images) {
            cam.validate()?;
            if (cam.width, cam.height) != (img.width, img.height) {
                return Err(DataError::DimensionMismatch(format!("{} does not match its camera", cam.image)));
            }
            match (cam.split, cam.appearance_id) {
                (Split::Train, Some(id)) if id == next => next += 1,
                (Split::Test, None) => {}
                _ => {
                    return Err(DataError::Manifest(format!(
                        "{}: train views need consecutive appearance ids, test views none",
                        cam.image
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&i| self.cameras[i].split == split).collect()
    }

    /// Number of appearance embedding rows (one per training image).
    pub fn appearance_count(&self) -> usize {
        self.split_indices(Split::Train).len()
    }

    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        for (cam, img) in self.cameras.iter().zip(&self.images) {
            img.save_png(&dir.join(&cam.image))?;
        }
        let m = Manifest {
            version: MANIFEST_VERSION,
            bounds: self.bounds,
            background: self.background,
            cameras: self.cameras.clone(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| DataError::Manifest(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        let images = m.cameras.iter().map(|c| Image::load_png(&dir.join(&c.image))).collect::<Result<Vec<_>, _>>()?;
        let ds = Self { cameras: m.cameras, images, bounds: m.bounds, background: m.background };
        ds.validate()?;
        Ok(ds)
    }
}
