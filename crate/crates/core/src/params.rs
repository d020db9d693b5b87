//! Named views over trainable tensors.

use serde::{Deserialize, Serialize};

/// Coarse grouping of trainable tensors, used for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TensorClass {
    HashTable,
    PlaneTable,
    DensityWeight,
    DensityBias,
    ColorWeight,
    ColorBias,
    Appearance,
}

impl TensorClass {
    pub const ALL: [TensorClass; 7] = [
        TensorClass::HashTable,
        TensorClass::PlaneTable,
        TensorClass::DensityWeight,
        TensorClass::DensityBias,
        TensorClass::ColorWeight,
        TensorClass::ColorBias,
        TensorClass::Appearance,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TensorClass::HashTable => "hash tables",
            TensorClass::PlaneTable => "plane tables",
            TensorClass::DensityWeight => "density MLP weights",
            TensorClass::DensityBias => "density MLP biases",
            TensorClass::ColorWeight => "color MLP weights",
            TensorClass::ColorBias => "color MLP biases",
            TensorClass::Appearance => "appearance rows",
        }
    }
}

pub struct Tensor<'a, T> {
    pub name: String,
    pub class: TensorClass,
    pub data: &'a [T],
}

pub struct TensorMut<'a, T> {
    pub name: String,
    pub class: TensorClass,
    pub data: &'a mut [T],
}

/// Anything holding trainable tensors in a fixed, deterministic order.
pub trait Parameters<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>>;
    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>>;

    fn param_count(&self) -> usize {
        self.tensors("").iter().map(|t| t.data.len()).sum()
    }
}

/// Zeroes every tensor.
pub fn zero_all<T: crate::Real, P: Parameters<T> + ?Sized>(p: &mut P) {
    for t in p.tensors_mut("") {
        t.data.fill(T::zero());
    }
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<T: crate::Real, P: Parameters<T> + ?Sized>(dst: &mut P, src: &P) {
    let src = src.tensors("");
    let dst = dst.tensors_mut("");
    assert_eq!(src.len(), dst.len());
    for (d, s) in dst.into_iter().zip(src) {
        for (a, &b) in d.data.iter_mut().zip(s.data) {
            *a += b;
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
