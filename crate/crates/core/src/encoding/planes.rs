//! Three orthogonal multi-resolution dense feature planes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{to_unit, EncodeError};
use crate::params::{join, Parameters, Tensor, TensorClass, TensorMut};
use crate::scalar::Real;
use crate::vec3::Vec3;

/// Axis treated as altitude.
pub const ALTITUDE_AXIS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Xy,
    Xz,
    Yz,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::Xy, Orientation::Xz, Orientation::Yz];

    /// In-plane axes, in lookup order.
    pub fn axes(self) -> [usize; 2] {
        match self {
            Orientation::Xy => [0, 1],
            Orientation::Xz => [0, 2],
            Orientation::Yz => [1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Orientation::Xy => "xy",
            Orientation::Xz => "xz",
            Orientation::Yz => "yz",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSetConfig {
    pub resolutions: Vec<usize>,
    pub feat_dim: usize,
    /// Stretch of the altitude coordinate on the XZ/YZ planes, about the
    /// plane center.
    pub vertical_scale: f64,
}

impl Default for PlaneSetConfig {
    fn default() -> Self {
        Self { resolutions: vec![128, 256, 512, 1024], feat_dim: 2, vertical_scale: 1.0 }
    }
}

impl PlaneSetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.resolutions.is_empty() || self.resolutions.contains(&0) || self.feat_dim == 0 {
            return Err("plane set needs non-empty non-zero resolutions and feat_dim".into());
        }
        if !(self.vertical_scale >= 1.0) {
            return Err(format!("vertical_scale {} must be >= 1", self.vertical_scale));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        3 * self.resolutions.len() * self.feat_dim
    }

    /// Exact count with `(N+1)^2` vertices per plane level.
    pub fn param_count(&self) -> usize {
        3 * self.feat_dim * self.resolutions.iter().map(|&n| (n + 1) * (n + 1)).sum::<usize>()
    }

    /// The `N^2 * F` per-plane figure, summed over planes and levels.
    pub fn nominal_param_count(&self) -> usize {
        3 * self.feat_dim * self.resolutions.iter().map(|&n| n * n).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSet<T> {
    pub config: PlaneSetConfig,
    pub domain_radius: f64,
    /// `planes[orientation][level]`, each `(N+1)^2 * F` values, x fastest.
    pub planes: Vec<Vec<Vec<T>>>,
}

impl<T: Real> PlaneSet<T> {
    pub fn zeros(config: PlaneSetConfig, domain_radius: f64) -> Self {
        let level_tables: Vec<Vec<T>> =
            config.resolutions.iter().map(|&n| vec![T::zero(); (n + 1) * (n + 1) * config.feat_dim]).collect();
        let planes = vec![level_tables; 3];
        Self { config, domain_radius, planes }
    }

    pub fn new<R: Rng + ?Sized>(config: PlaneSetConfig, domain_radius: f64, rng: &mut R) -> Self {
        let mut set = Self::zeros(config, domain_radius);
        for table in set.planes.iter_mut().flatten() {
            for v in table.iter_mut() {
                *v = T::lit(rng.gen_range(-1e-4..1e-4));
            }
        }
        set
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone(), self.domain_radius)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Visits the 4 bilinear corners per orientation and level as
    /// `(orientation, level, slot, weight)`; the output block for a pair is
    /// `(orientation * levels + level) * F`.
    #[inline]
    pub fn for_each_corner(&self, x: Vec3<T>, mut f: impl FnMut(usize, usize, usize, T)) -> Result<(), EncodeError> {
        let u = to_unit(x, self.domain_radius)?;
        let scale = T::lit(self.config.vertical_scale);
        let half = T::lit(0.5);
        for (oi, orient) in Orientation::ALL.iter().enumerate() {
            let axes = orient.axes();
            let mut uv = [u[axes[0]], u[axes[1]]];
            if axes[1] == ALTITUDE_AXIS {
                uv[1] = (half + (uv[1] - half) * scale).max(T::zero()).min(T::one());
            }
            for (level, &res) in self.config.resolutions.iter().enumerate() {
                let side = res + 1;
                let mut cell = [0usize; 2];
                let mut frac = [T::zero(); 2];
                for a in 0..2 {
                    let p = uv[a] * T::lit(res as f64);
                    let c = (p.as_f64() as usize).min(res - 1);
                    cell[a] = c;
                    frac[a] = p - T::lit(c as f64);
                }
                let base = cell[0] + side * cell[1];
                let (fx, fy) = (frac[0], frac[1]);
                let one = T::one();
                f(oi, level, base, (one - fx) * (one - fy));
                f(oi, level, base + 1, fx * (one - fy));
                f(oi, level, base + side, (one - fx) * fy);
                f(oi, level, base + side + 1, fx * fy);
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: Vec3<T>, out: &mut [T]) -> Result<(), EncodeError> {
        let fd = self.config.feat_dim;
        let levels = self.config.resolutions.len();
        debug_assert_eq!(out.len(), self.output_dim());
        out.fill(T::zero());
        let planes = &self.planes;
        self.for_each_corner(x, |oi, level, slot, w| {
            let entry = &planes[oi][level][slot * fd..slot * fd + fd];
            let block = (oi * levels + level) * fd;
            for (o, &e) in out[block..block + fd].iter_mut().zip(entry) {
                *o += w * e;
            }
        })
    }

    pub fn backward(&self, x: Vec3<T>, d_out: &[T], grads: &mut Self) -> Result<(), EncodeError> {
        let fd = self.config.feat_dim;
        let levels = self.config.resolutions.len();
        debug_assert_eq!(d_out.len(), self.output_dim());
        let planes = &mut grads.planes;
        self.for_each_corner(x, |oi, level, slot, w| {
            let block = (oi * levels + level) * fd;
            let entry = &mut planes[oi][level][slot * fd..slot * fd + fd];
            for (g, &d) in entry.iter_mut().zip(&d_out[block..block + fd]) {
                *g += w * d;
            }
        })
    }
}

impl<T: Real> Parameters<T> for PlaneSet<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        let mut out = Vec::new();
        for (oi, levels) in self.planes.iter().enumerate() {
            for (l, t) in levels.iter().enumerate() {
                let name = join(prefix, &format!("plane.{}.l{l}", Orientation::ALL[oi].name()));
                out.push(Tensor { name, class: TensorClass::PlaneTable, data: t.as_slice() });
            }
        }
        out
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        for (oi, levels) in self.planes.iter_mut().enumerate() {
            for (l, t) in levels.iter_mut().enumerate() {
                let name = join(prefix, &format!("plane.{}.l{l}", Orientation::ALL[oi].name()));
                out.push(TensorMut { name, class: TensorClass::PlaneTable, data: t.as_mut_slice() });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_param_counts() {
        let cfg = PlaneSetConfig::default();
        assert_eq!(cfg.output_dim(), 24);
        assert_eq!(cfg.param_count(), 6 * (129 * 129 + 257 * 257 + 513 * 513 + 1025 * 1025));
        assert_eq!(cfg.nominal_param_count(), 6 * (128 * 128 + 256 * 256 + 512 * 512 + 1024 * 1024));
    }

    #[test]
    fn vertex_lookup_is_exact() {
        let cfg = PlaneSetConfig { resolutions: vec![4], feat_dim: 1, vertical_scale: 1.0 };
        let mut set = PlaneSet::<f64>::zeros(cfg, 1.0);
        for (oi, p) in set.planes.iter_mut().enumerate() {
            for (i, v) in p[0].iter_mut().enumerate() {
                *v = (oi * 100 + i) as f64;
            }
        }
        // unit (0.25, 0.75, 0.5) -> grid (1, 3, 2)
        let mut out = [0.0; 3];
        set.encode(Vec3::new(-0.5, 0.5, 0.0), &mut out).unwrap();
        assert_eq!(out, [(1 + 5 * 3) as f64, (100 + 1 + 5 * 2) as f64, (200 + 3 + 5 * 2) as f64]);
    }

    #[test]
    fn unit_vertical_scale_is_isotropic() {
        // identical tables on every orientation: XZ at (a, _, c) must equal XY at (a, c, _)
        let cfg = PlaneSetConfig { resolutions: vec![8], feat_dim: 2, vertical_scale: 1.0 };
        let mut set = PlaneSet::<f64>::new(cfg, 1.0, &mut rand::thread_rng());
        let shared = set.planes[0].clone();
        set.planes[1] = shared.clone();
        set.planes[2] = shared;
        let (mut a, mut b) = ([0.0; 6], [0.0; 6]);
        set.encode(Vec3::new(0.3, -0.7, 0.45), &mut a).unwrap();
        set.encode(Vec3::new(0.3, 0.45, 0.9), &mut b).unwrap();
        assert!((a[2] - b[0]).abs() < 1e-15 && (a[3] - b[1]).abs() < 1e-15);
    }

    #[test]
    fn vertical_scale_clamps_altitude() {
        let cfg = PlaneSetConfig { resolutions: vec![4], feat_dim: 1, vertical_scale: 4.0 };
        let mut set = PlaneSet::<f64>::zeros(cfg, 1.0);
        for p in set.planes.iter_mut() {
            for (i, v) in p[0].iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        // z unit 0.9 -> 0.5 + 0.4 * 4 -> clamped to 1 -> grid row 4
        let mut out = [0.0; 3];
        set.encode(Vec3::new(-1.0, -1.0, 0.8), &mut out).unwrap();
        assert_eq!(out[1], 20.0);
        assert_eq!(out[2], 20.0);
        // xy plane ignores altitude: vertex (0, 0)
        assert_eq!(out[0], 0.0);
    }
}
