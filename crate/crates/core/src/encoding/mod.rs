//! Trainable feature encoders over contracted space.
//!
//! Every encoder maps a contracted point `x` with `|x| <= domain_radius` onto
//! the unit cube via `u = (x / domain_radius + 1) / 2` and interpolates its
//! tables there. Gradients are scattered back into an encoder-shaped buffer
//! (see [`EncoderGradients`]); interpolation weights are recomputed from `x`,
//! so no forward state has to be kept.

mod hashgrid;
mod planes;

pub use hashgrid::{hash_index, HashGrid, HashGridConfig};
pub use planes::{Orientation, PlaneSet, PlaneSetConfig, ALTITUDE_AXIS};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{Parameters, Tensor, TensorMut};
use crate::scalar::Real;
use crate::vec3::Vec3;

/// Slack allowed outside the unit cube before a query is rejected.
pub const DOMAIN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("point {point:?} is outside the encoder domain (radius {radius})")]
    OutOfDomain { point: [f64; 3], radius: f64 },
}

/// Contracted coordinates to `[0, 1]^3`, clamping slack below tolerance.
#[inline]
pub(crate) fn to_unit<T: Real>(x: Vec3<T>, radius: f64) -> Result<[T; 3], EncodeError> {
    let inv = T::lit(0.5 / radius);
    let half = T::lit(0.5);
    let mut u = [T::zero(); 3];
    for a in 0..3 {
        let v = x[a] * inv + half;
        let vf = v.as_f64();
        if !(-DOMAIN_TOLERANCE..=1.0 + DOMAIN_TOLERANCE).contains(&vf) {
            return Err(EncodeError::OutOfDomain { point: x.to_f64(), radius });
        }
        u[a] = v.max(T::zero()).min(T::one());
    }
    Ok(u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Hybrid,
    HashOnly,
    PlaneOnly,
}

impl std::str::FromStr for EncoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hybrid" => Ok(Self::Hybrid),
            "hash-only" | "hash" => Ok(Self::HashOnly),
            "plane-only" | "plane" => Ok(Self::PlaneOnly),
            other => Err(format!("unknown encoder kind '{other}' (hybrid, hash-only, plane-only)")),
        }
    }
}

/// A hash grid, a plane set, or both concatenated (grid features first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Encoder<T> {
    Hash(HashGrid<T>),
    Planes(PlaneSet<T>),
    Hybrid(HashGrid<T>, PlaneSet<T>),
}

/// Gradient buffer with the same table layout as the encoder it belongs to.
pub type EncoderGradients<T> = Encoder<T>;

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(
        kind: EncoderKind,
        grid: &HashGridConfig,
        planes: &PlaneSetConfig,
        domain_radius: f64,
        rng: &mut R,
    ) -> Self {
        match kind {
            EncoderKind::HashOnly => Encoder::Hash(HashGrid::new(grid.clone(), domain_radius, rng)),
            EncoderKind::PlaneOnly => Encoder::Planes(PlaneSet::new(planes.clone(), domain_radius, rng)),
            EncoderKind::Hybrid => {
                let g = HashGrid::new(grid.clone(), domain_radius, rng);
                let p = PlaneSet::new(planes.clone(), domain_radius, rng);
                Encoder::Hybrid(g, p)
            }
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Hash(_) => EncoderKind::HashOnly,
            Encoder::Planes(_) => EncoderKind::PlaneOnly,
            Encoder::Hybrid(..) => EncoderKind::Hybrid,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Encoder::Hash(g) => Encoder::Hash(g.zeros_like()),
            Encoder::Planes(p) => Encoder::Planes(p.zeros_like()),
            Encoder::Hybrid(g, p) => Encoder::Hybrid(g.zeros_like(), p.zeros_like()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Hash(g) => g.output_dim(),
            Encoder::Planes(p) => p.output_dim(),
            Encoder::Hybrid(g, p) => g.output_dim() + p.output_dim(),
        }
    }

    /// Length of the plane-feature suffix of the output (0 without planes).
    pub fn plane_dim(&self) -> usize {
        match self {
            Encoder::Hash(_) => 0,
            Encoder::Planes(p) | Encoder::Hybrid(_, p) => p.output_dim(),
        }
    }

    pub fn encode(&self, x: Vec3<T>, out: &mut [T]) -> Result<(), EncodeError> {
        match self {
            Encoder::Hash(g) => g.encode(x, out),
            Encoder::Planes(p) => p.encode(x, out),
            Encoder::Hybrid(g, p) => {
                let (head, tail) = out.split_at_mut(g.output_dim());
                g.encode(x, head)?;
                p.encode(x, tail)
            }
        }
    }

    pub fn encode_vec(&self, x: Vec3<T>) -> Result<Vec<T>, EncodeError> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode(x, &mut out)?;
        Ok(out)
    }

    /// Accumulates `d_feature` into `grads`, which must be shaped like `self`.
    pub fn backward(&self, x: Vec3<T>, d_feature: &[T], grads: &mut EncoderGradients<T>) -> Result<(), EncodeError> {
        match (self, grads) {
            (Encoder::Hash(g), Encoder::Hash(gg)) => g.backward(x, d_feature, gg),
            (Encoder::Planes(p), Encoder::Planes(pg)) => p.backward(x, d_feature, pg),
            (Encoder::Hybrid(g, p), Encoder::Hybrid(gg, pg)) => {
                let (head, tail) = d_feature.split_at(g.output_dim());
                g.backward(x, head, gg)?;
                p.backward(x, tail, pg)
            }
            _ => panic!("gradient buffer does not match encoder variant"),
        }
    }

    pub fn grid(&self) -> Option<&HashGrid<T>> {
        match self {
            Encoder::Hash(g) | Encoder::Hybrid(g, _) => Some(g),
            Encoder::Planes(_) => None,
        }
    }

    pub fn planes(&self) -> Option<&PlaneSet<T>> {
        match self {
            Encoder::Planes(p) | Encoder::Hybrid(_, p) => Some(p),
            Encoder::Hash(_) => None,
        }
    }

    pub fn planes_mut(&mut self) -> Option<&mut PlaneSet<T>> {
        match self {
            Encoder::Planes(p) | Encoder::Hybrid(_, p) => Some(p),
            Encoder::Hash(_) => None,
        }
    }

    pub fn grid_mut(&mut self) -> Option<&mut HashGrid<T>> {
        match self {
            Encoder::Hash(g) | Encoder::Hybrid(g, _) => Some(g),
            Encoder::Planes(_) => None,
        }
    }
}

impl<T: Real> Parameters<T> for Encoder<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        match self {
            Encoder::Hash(g) => g.tensors(prefix),
            Encoder::Planes(p) => p.tensors(prefix),
            Encoder::Hybrid(g, p) => {
                let mut v = g.tensors(prefix);
                v.extend(p.tensors(prefix));
                v
            }
        }
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        match self {
            Encoder::Hash(g) => g.tensors_mut(prefix),
            Encoder::Planes(p) => p.tensors_mut(prefix),
            Encoder::Hybrid(g, p) => {
                let mut v = g.tensors_mut(prefix);
                v.extend(p.tensors_mut(prefix));
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hybrid() -> Encoder<f64> {
        let grid = HashGridConfig { levels: 16, table_size: 1 << 10, ..Default::default() };
        let planes = PlaneSetConfig { resolutions: vec![8, 16, 32, 64], ..Default::default() };
        Encoder::new(EncoderKind::Hybrid, &grid, &planes, 2.0, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn default_hybrid_dimension_is_56() {
        let enc = hybrid();
        assert_eq!(enc.output_dim(), 56);
        assert_eq!(enc.grid().unwrap().output_dim(), 32);
        assert_eq!(enc.plane_dim(), 24);
    }

    #[test]
    fn hybrid_is_concatenation() {
        let mut enc = hybrid();
        let x = Vec3::new(0.3, -1.2, 0.9);
        let full = enc.encode_vec(x).unwrap();
        let mut g = vec![0.0; 32];
        enc.grid().unwrap().encode(x, &mut g).unwrap();
        let mut p = vec![0.0; 24];
        enc.planes().unwrap().encode(x, &mut p).unwrap();
        assert_eq!(&full[..32], &g[..]);
        assert_eq!(&full[32..], &p[..]);

        for t in enc.planes_mut().unwrap().tensors_mut("") {
            t.data.fill(0.0);
        }
        let zeroed = enc.encode_vec(x).unwrap();
        assert!(zeroed[32..].iter().all(|&v| v == 0.0));
        assert_eq!(&zeroed[..32], &g[..]);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("hash-only".parse::<EncoderKind>().unwrap(), EncoderKind::HashOnly);
        assert_eq!("hybrid".parse::<EncoderKind>().unwrap(), EncoderKind::Hybrid);
        assert!("mlp".parse::<EncoderKind>().is_err());
    }

    #[test]
    fn unit_mapping_tolerance() {
        assert!(to_unit(Vec3::new(2.0, -2.0, 0.0), 2.0).is_ok());
        assert!(to_unit(Vec3::new(2.0001, 0.0, 0.0), 2.0).is_err());
    }
}
