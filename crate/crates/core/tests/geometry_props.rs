use hybrid_field::geometry::{
    contract, foreground_interval, normalize_point, resample_fine, sample_background, sample_background_span, sample_foreground,
    SampleSet,
};
use hybrid_field::{Ray, SceneBounds, Vec3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3() -> impl Strategy<Value = Vec3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3<f64>> {
    vec3().prop_filter("non-degenerate", |v| v.norm() > 1e-3).prop_map(|v| v.normalized())
}

fn bounds() -> SceneBounds<f64> {
    SceneBounds::new(Vec3::new(0.3, -0.2, 0.5), 2.0)
}

proptest! {
    #[test]
    fn contraction_is_identity_inside_the_ball(d in unit(), r in 0.0..1.0f64) {
        let x = d * r;
        prop_assert_eq!(contract(x, 2.0, 1.0), x);
    }

    #[test]
    fn contraction_stays_inside_and_keeps_direction(d in unit(), log_r in 0.0..12.0f64, b in 0.1..3.0f64) {
        let x = d * log_r.exp();
        let y = contract(x, 2.0, b);
        prop_assert!(y.norm() < 1.0 + b + 1e-12);
        prop_assert!(y.norm() >= 1.0 - 1e-12);
        prop_assert!((y.normalized() - d).norm() < 1e-9);
    }

    #[test]
    fn contraction_radius_is_monotone(d in unit(), r in 1.0..50.0f64, dr in 1e-3..10.0f64) {
        let a = contract(d * r, 2.0, 1.0).norm();
        let b = contract(d * (r + dr), 2.0, 1.0).norm();
        prop_assert!(b > a);
    }

    #[test]
    fn contraction_is_continuous_at_the_boundary(d in unit(), b in 0.1..3.0f64) {
        let inside = contract(d * (1.0 - 1e-12), 2.0, b);
        let outside = contract(d * (1.0 + 1e-12), 2.0, b);
        prop_assert!((inside - outside).norm() < 1e-9);
    }

    #[test]
    fn foreground_interval_endpoints_lie_on_the_sphere(o in vec3(), d in unit()) {
        let b = bounds();
        let origin = b.center + o * 4.0;
        let ray = Ray::new(origin, d, 0.0, b.t_far()).unwrap();
        if let Some((t0, t1)) = foreground_interval(&ray, &b) {
            prop_assert!(t0 <= t1);
            for t in [t0, t1] {
                let n = normalize_point(ray.at(t), &b).norm();
                // the interval is clamped to t_near, where the point may be inside
                if t > ray.t_near {
                    prop_assert!((n - 1.0).abs() < 1e-9, "norm {}", n);
                } else {
                    prop_assert!(n <= 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn sample_set_is_sorted_and_tagged(o in vec3(), d in unit(), nf in 1usize..12, nb in 1usize..12) {
        let b = bounds();
        let ray = Ray::new(b.center + o * 0.9, d, b.t_near(), b.t_far()).unwrap();
        let mut t = sample_foreground::<f64, ChaCha8Rng>(&ray, &b, nf, None).unwrap();
        t.extend(sample_background::<f64, ChaCha8Rng>(&ray, &b, nb, None));
        let s = SampleSet::from_sorted(&ray, &b, t).unwrap();
        for w in s.t_values.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for i in 0..s.len() {
            let xn = normalize_point(ray.at(s.t_values[i]), &b);
            prop_assert!(s.positions[i].norm() <= 2.0 + 1e-12);
            prop_assert_eq!(s.regions[i] == hybrid_field::geometry::Region::Foreground, xn.norm() <= 1.0);
        }
    }

    #[test]
    fn jittered_background_stays_in_its_bins(seed in 0u64..1000, n in 1usize..40) {
        let (t0, t1) = (1.3, 400.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_background_span(t0, t1, n, Some(&mut rng));
        for (k, &v) in t.iter().enumerate() {
            // invert the disparity map independently: s = (1/t0 - 1/t) / (1/t0 - 1/t1)
            let s = (1.0 / t0 - 1.0 / v) / (1.0 / t0 - 1.0 / t1);
            prop_assert!(s > k as f64 / n as f64 - 1e-12 && s <= (k + 1) as f64 / n as f64 + 1e-12);
        }
    }
}

#[test]
fn million_point_contraction_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    use rand::Rng;
    for _ in 0..1_000_000 {
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if d.norm() < 1e-6 {
            continue;
        }
        let x = d * (rng.gen_range(-3.0..8.0f64)).exp();
        let y = contract(x, 2.0, 1.0);
        assert!(y.norm() < 2.0);
        if x.norm() <= 1.0 {
            assert_eq!(y, x);
        } else {
            assert!((y.normalized() - x.normalized()).norm() < 1e-9);
        }
    }
}

#[test]
fn background_matches_disparity_formula() {
    let b = SceneBounds::new(Vec3::zero(), 1.0);
    let ray = Ray::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0).unwrap();
    let t = sample_background::<f64, ChaCha8Rng>(&ray, &b, 4, None);
    let expect: Vec<f64> = (1..=4).map(|k| {
        let s = k as f64 / 4.0;
        1.0 / ((1.0 - s) / 1.0 + s / 100.0)
    }).collect();
    for (a, e) in t.iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
    assert!((t[3] - 100.0).abs() < 1e-9);
}

#[test]
fn resample_matches_cdf_fractions() {
    let t = [0.0, 1.0, 2.0, 3.0];
    let w = [0.25, 0.75, 0.0, 0.9];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = resample_fine(&t, &w, 1000, Some(&mut rng));
    let second = s.iter().filter(|&&v| (1.0..2.0).contains(&v)).count() as f64 / 1000.0;
    assert!((second - 0.75).abs() < 0.03, "fraction {second}");
    assert!(s.iter().all(|&v| (0.0..=2.0).contains(&v)));
    assert!(s.windows(2).all(|p| p[0] <= p[1]));
}
