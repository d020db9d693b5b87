//! Hybrid hash-grid / tri-plane radiance fields.
//!
//! The crate is generic over the scalar type ([`Real`], implemented for `f32`
//! and `f64`); the aliases at the bottom pin the common instantiations.

pub mod checkpoint;
pub mod data;
pub mod encoding;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod render;
pub mod scalar;
pub mod vec3;

pub use field::{Appearance, ModelConfig, ParamBreakdown, RadianceField};
pub use geometry::{Ray, SceneBounds};
pub use params::Parameters;
pub use render::RenderConfig;
pub use scalar::Real;
pub use vec3::Vec3;

pub type FieldF32 = RadianceField<f32>;
pub type FieldF64 = RadianceField<f64>;
pub type BoundsF32 = SceneBounds<f32>;
pub type BoundsF64 = SceneBounds<f64>;
pub type Vec3f = Vec3<f32>;
pub type Vec3d = Vec3<f64>;
