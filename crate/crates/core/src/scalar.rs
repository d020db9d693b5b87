//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Training normally runs at `f32`; gradient checks run at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable for parameters, activations and gradients.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Width on disk, in bytes.
    const BYTES: usize;
    /// Tag written into checkpoint headers.
    const DTYPE: &'static str;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the first `BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $tag:literal) => {
        impl Real for $t {
            const BYTES: usize = std::mem::size_of::<$t>();
            const DTYPE: &'static str = $tag;

            #[inline(always)]
            fn lit(v: f64) -> Self {
                v as $t
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, "f32");
impl_real!(f64, "f64");

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += sum_k input[k] * w[k * out.len()..][..out.len()]`: a dense
/// vector-matrix product with an input-major matrix. Outputs are processed
/// in register-sized blocks so each block is loaded and stored once.
#[inline]
pub fn gemv_acc<T: Real>(input: &[T], w: &[T], out: &mut [T]) {
    let m = out.len();
    debug_assert_eq!(w.len(), input.len() * m);
    let mut o = 0;
    while o + 8 <= m {
        let mut acc = [T::zero(); 8];
        acc.copy_from_slice(&out[o..o + 8]);
        for (k, &x) in input.iter().enumerate() {
            let row = &w[k * m + o..k * m + o + 8];
            for j in 0..8 {
                acc[j] += x * row[j];
            }
        }
        out[o..o + 8].copy_from_slice(&acc);
        o += 8;
    }
    for j in o..m {
        let mut acc = out[j];
        for (k, &x) in input.iter().enumerate() {
            acc += x * w[k * m + j];
        }
        out[j] = acc;
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..19).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn le_round_trip_is_bit_exact() {
        let mut buf = Vec::new();
        let v = 0.1f32 + 1e-7;
        v.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf).to_bits(), v.to_bits());
        let mut buf = Vec::new();
        (-2.5e-300f64).write_le(&mut buf);
        assert_eq!(f64::read_le(&buf), -2.5e-300);
    }
}
