use std::f64::consts::PI;

use hybrid_field::field::sh::{sh_basis, SH_DIM};
use hybrid_field::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Associated Legendre `P_l^m(x)` with the Condon-Shortley phase, by the
/// standard upward recurrence in `l`.
fn legendre(l: u32, m: u32, x: f64) -> f64 {
    let mut pmm = 1.0;
    let s = (1.0 - x * x).max(0.0).sqrt();
    for i in 0..m {
        pmm *= -((2 * i + 1) as f64) * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut prev = pmm;
    for ll in m + 2..=l {
        let next = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
        prev = pm1;
        pm1 = next;
    }
    pm1
}

/// Real SH `Y_lm` at `l*l + l + m`, sine terms for negative `m`.
fn real_sh(l: u32, m: i32, d: Vec3<f64>) -> f64 {
    let theta = d.z.clamp(-1.0, 1.0).acos();
    let phi = d.y.atan2(d.x);
    let am = m.unsigned_abs();
    let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, theta.cos());
    match m.signum() {
        0 => k * p,
        1 => 2f64.sqrt() * k * p * (am as f64 * phi).cos(),
        _ => 2f64.sqrt() * k * p * (am as f64 * phi).sin(),
    }
}

fn unit() -> impl Strategy<Value = Vec3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized())
}

proptest! {
    #[test]
    fn basis_matches_legendre_construction(d in unit()) {
        let v = sh_basis(d);
        for l in 0..4u32 {
            for m in -(l as i32)..=l as i32 {
                let i = (l * l) as i32 + l as i32 + m;
                let e = real_sh(l, m, d);
                prop_assert!((v[i as usize] - e).abs() < 1e-12, "l {} m {}: {} vs {}", l, m, v[i as usize], e);
            }
        }
    }
}

#[test]
fn basis_is_orthonormal_on_the_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200_000;
    let mut gram = [[0.0f64; SH_DIM]; SH_DIM];
    for _ in 0..n {
        // uniform on the sphere
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).sqrt();
        let v = sh_basis(Vec3::new(s * phi.cos(), s * phi.sin(), z));
        for i in 0..SH_DIM {
            for j in 0..SH_DIM {
                gram[i][j] += v[i] * v[j];
            }
        }
    }
    for i in 0..SH_DIM {
        for j in 0..SH_DIM {
            let g = gram[i][j] * 4.0 * PI / n as f64;
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((g - e).abs() < 0.03, "gram[{i}][{j}] = {g}");
        }
    }
}
