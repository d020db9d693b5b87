//! Multi-resolution hash grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{to_unit, EncodeError};
use crate::params::{join, Parameters, Tensor, TensorClass, TensorMut};
use crate::scalar::Real;
use crate::vec3::Vec3;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    /// Entries per level; must be a power of two.
    pub table_size: usize,
    pub feat_dim: usize,
    pub res_min: usize,
    pub res_max: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self { levels: 16, table_size: 1 << 19, feat_dim: 2, res_min: 16, res_max: 2048 }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.levels == 0 || self.feat_dim == 0 {
            return Err("hash grid needs at least one level and one feature".into());
        }
        if !self.table_size.is_power_of_two() {
            return Err(format!("hash table size {} is not a power of two", self.table_size));
        }
        if self.res_min == 0 || self.res_max < self.res_min {
            return Err(format!("bad resolution range {}..{}", self.res_min, self.res_max));
        }
        if self.levels == 1 && self.res_min != self.res_max {
            return Err("single-level grid needs res_min == res_max".into());
        }
        Ok(())
    }

    /// Per-level resolutions `floor(res_min * g^l)` with geometric growth `g`.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.res_min];
        }
        let growth = ((self.res_max as f64 / self.res_min as f64).ln() / (self.levels - 1) as f64).exp();
        (0..self.levels)
            .map(|l| {
                // small bias so the exact endpoint survives rounding
                (self.res_min as f64 * growth.powi(l as i32) + 1e-6).floor() as usize
            })
            .collect()
    }

    pub fn level_entries(&self, resolution: usize) -> usize {
        let verts = (resolution + 1).pow(3);
        verts.min(self.table_size)
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.feat_dim
    }

    pub fn param_count(&self) -> usize {
        self.resolutions().iter().map(|&n| self.level_entries(n) * self.feat_dim).sum()
    }

    /// `levels * table_size * feat_dim`.
    pub fn param_bound(&self) -> usize {
        self.levels * self.table_size * self.feat_dim
    }

    pub fn index(&self, cell: [u32; 3], level: usize) -> usize {
        hash_index(cell, self.resolutions()[level], self.table_size)
    }
}

/// Table slot of a grid vertex: row-major (x fastest) when the level fits in
/// the table, otherwise the XOR-of-primes spatial hash.
#[inline]
pub fn hash_index(cell: [u32; 3], resolution: usize, table_size: usize) -> usize {
    let side = resolution + 1;
    if side * side * side <= table_size {
        cell[0] as usize + side * (cell[1] as usize + side * cell[2] as usize)
    } else {
        let h = cell[0].wrapping_mul(PRIMES[0]) ^ cell[1].wrapping_mul(PRIMES[1]) ^ cell[2].wrapping_mul(PRIMES[2]);
        h as usize & (table_size - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashGrid<T> {
    pub config: HashGridConfig,
    /// Contracted-space radius that maps onto the unit cube.
    pub domain_radius: f64,
    pub resolutions: Vec<usize>,
    pub tables: Vec<Vec<T>>,
}

impl<T: Real> HashGrid<T> {
    pub fn zeros(config: HashGridConfig, domain_radius: f64) -> Self {
        let resolutions = config.resolutions();
        let tables = resolutions.iter().map(|&n| vec![T::zero(); config.level_entries(n) * config.feat_dim]).collect();
        Self { config, domain_radius, resolutions, tables }
    }

    /// Tables drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new<R: Rng + ?Sized>(config: HashGridConfig, domain_radius: f64, rng: &mut R) -> Self {
        let mut grid = Self::zeros(config, domain_radius);
        for table in &mut grid.tables {
            for v in table.iter_mut() {
                *v = T::lit(rng.gen_range(-1e-4..1e-4));
            }
        }
        grid
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone(), self.domain_radius)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Visits the 8 interpolation corners of every level as
    /// `(level, table slot, weight)`.
    #[inline]
    pub fn for_each_corner(&self, x: Vec3<T>, mut f: impl FnMut(usize, usize, T)) -> Result<(), EncodeError> {
        let u = to_unit(x, self.domain_radius)?;
        let table_size = self.config.table_size;
        for (level, &res) in self.resolutions.iter().enumerate() {
            let scale = T::lit(res as f64);
            let mut cell = [0usize; 3];
            let mut wts = [[T::zero(); 2]; 3];
            for a in 0..3 {
                // u >= 0, so truncation is floor
                let p = u[a] * scale;
                let c = (p.as_f64() as usize).min(res - 1);
                let frac = p - T::lit(c as f64);
                cell[a] = c;
                wts[a] = [T::one() - frac, frac];
            }
            // per-axis slot terms, combined by + (dense) or ^ (hashed)
            let side = res + 1;
            let dense = side * side * side <= table_size;
            let mut terms = [[0usize; 2]; 3];
            for a in 0..3 {
                for (b, t) in terms[a].iter_mut().enumerate() {
                    let c = cell[a] + b;
                    *t = if dense {
                        c * side.pow(a as u32)
                    } else {
                        (c as u32).wrapping_mul(PRIMES[a]) as usize
                    };
                }
            }
            for corner in 0..8usize {
                let (bx, by, bz) = (corner & 1, corner >> 1 & 1, corner >> 2 & 1);
                let slot = if dense {
                    terms[0][bx] + terms[1][by] + terms[2][bz]
                } else {
                    (terms[0][bx] ^ terms[1][by] ^ terms[2][bz]) & (table_size - 1)
                };
                f(level, slot, wts[0][bx] * wts[1][by] * wts[2][bz]);
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: Vec3<T>, out: &mut [T]) -> Result<(), EncodeError> {
        let fd = self.config.feat_dim;
        debug_assert_eq!(out.len(), self.output_dim());
        out.fill(T::zero());
        let tables = &self.tables;
        self.for_each_corner(x, |level, slot, w| {
            let entry = &tables[level][slot * fd..slot * fd + fd];
            for (o, &e) in out[level * fd..level * fd + fd].iter_mut().zip(entry) {
                *o += w * e;
            }
        })
    }

    /// Scatter-adds `d_out` through the interpolation weights into `grads`.
    pub fn backward(&self, x: Vec3<T>, d_out: &[T], grads: &mut Self) -> Result<(), EncodeError> {
        let fd = self.config.feat_dim;
        debug_assert_eq!(d_out.len(), self.output_dim());
        let tables = &mut grads.tables;
        self.for_each_corner(x, |level, slot, w| {
            let entry = &mut tables[level][slot * fd..slot * fd + fd];
            for (g, &d) in entry.iter_mut().zip(&d_out[level * fd..level * fd + fd]) {
                *g += w * d;
            }
        })
    }
}

impl<T: Real> Parameters<T> for HashGrid<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        self.tables
            .iter()
            .enumerate()
            .map(|(l, t)| Tensor { name: join(prefix, &format!("hash.l{l}")), class: TensorClass::HashTable, data: t })
            .collect()
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        self.tables
            .iter_mut()
            .enumerate()
            .map(|(l, t)| TensorMut { name: join(prefix, &format!("hash.l{l}")), class: TensorClass::HashTable, data: t })
            .collect()
    }
}
