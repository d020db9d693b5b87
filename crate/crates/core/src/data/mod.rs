//! Datasets, the synthetic scene oracle, image I/O and image metrics.

mod camera;
mod dataset;
mod image;
mod synthetic;

pub use camera::{Camera, Split};
pub use dataset::{SceneDataset, MANIFEST_FILE, MANIFEST_VERSION};
pub use image::{
    gaussian_taps, mse, psnr, psnr_from_mse, ssim, Image, LUMA, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use synthetic::{
    generate_synthetic, oracle_radiance, oracle_ray, oracle_samples, BoundsSpec, GroundSpec, Primitive, PrimitiveKind,
    SyntheticSceneSpec, TrajectorySpec,
};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("pixel ({px}, {py}) outside {width}x{height} image")]
    OutOfImage { px: usize, py: usize, width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("camera {0} sits inside a primitive")]
    CameraInsidePrimitive(usize),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
