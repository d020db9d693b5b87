//! Real spherical harmonics up to degree 3, Condon-Shortley phase included.

use crate::scalar::Real;
use crate::vec3::Vec3;

pub const SH_DIM: usize = 16;

/// Basis values for a unit direction.
pub fn sh_basis<T: Real>(d: Vec3<T>) -> [T; SH_DIM] {
    let c = T::lit;
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        c(0.282_094_791_773_878_14),
        c(-0.488_602_511_902_919_9) * y,
        c(0.488_602_511_902_919_9) * z,
        c(-0.488_602_511_902_919_9) * x,
        c(1.092_548_430_592_079_2) * x * y,
        c(-1.092_548_430_592_079_2) * y * z,
        c(0.315_391_565_252_520_05) * (c(2.0) * zz - xx - yy),
        c(-1.092_548_430_592_079_2) * x * z,
        c(0.546_274_215_296_039_6) * (xx - yy),
        c(-0.590_043_589_926_643_5) * y * (c(3.0) * xx - yy),
        c(2.890_611_442_640_554) * x * y * z,
        c(-0.457_045_799_464_465_8) * y * (c(4.0) * zz - xx - yy),
        c(0.373_176_332_590_115_4) * z * (c(2.0) * zz - c(3.0) * xx - c(3.0) * yy),
        c(-0.457_045_799_464_465_8) * x * (c(4.0) * zz - xx - yy),
        c(1.445_305_721_320_277) * z * (xx - yy),
        c(-0.590_043_589_926_643_5) * x * (xx - c(3.0) * yy),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_band() {
        let v = sh_basis(Vec3::new(0.6f64, 0.0, 0.8));
        assert!((v[0] - 0.28209479177).abs() < 1e-11);
    }

    #[test]
    fn parity_per_degree() {
        let d = Vec3::new(0.2f64, -0.5, 0.3).normalized();
        let (a, b) = (sh_basis(d), sh_basis(-d));
        for (l, range) in [(0, 0..1), (1, 1..4), (2, 4..9), (3, 9..16)] {
            for i in range {
                let expect = if l % 2 == 0 { a[i] } else { -a[i] };
                assert!((b[i] - expect).abs() < 1e-15, "degree {l} component {i}");
            }
        }
    }
}
