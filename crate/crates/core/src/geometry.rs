//! Scene parameterization and per-ray sample placement.
//!
//! World points are normalized by the foreground bound, then contracted so
//! that all of space lands inside a ball of radius `1 + b`. Foreground
//! samples are spaced linearly inside the unit ball; background samples are
//! spaced linearly in disparity out to a finite far cap.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::vec3::Vec3;

/// Far plane as a multiple of the foreground bound.
pub const FAR_CAP_FACTOR: f64 = 1e3;
/// Near plane as a multiple of the foreground bound.
pub const NEAR_FACTOR: f64 = 0.05;
/// Interval length assigned to the last sample of a ray.
pub const LAST_DELTA: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ray does not intersect the foreground region")]
    NoForegroundIntersection,
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("invalid scene bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds<T> {
    pub center: Vec3<T>,
    /// Half-extent of the foreground region, world units.
    pub radius: T,
    /// Size of the contracted background shell.
    pub bg_size: T,
    pub p_norm: T,
    /// Min/max camera altitude in world units.
    pub altitude_range: (T, T),
}

impl<T: Real> SceneBounds<T> {
    pub fn new(center: Vec3<T>, radius: T) -> Self {
        Self {
            center,
            radius,
            bg_size: T::one(),
            p_norm: T::lit(2.0),
            altitude_range: (center.z - radius, center.z + radius),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > T::zero()) {
            return Err(GeometryError::InvalidBounds("radius must be positive".into()));
        }
        if !(self.bg_size > T::zero()) {
            return Err(GeometryError::InvalidBounds("bg_size must be positive".into()));
        }
        if !(self.p_norm >= T::one()) {
            return Err(GeometryError::InvalidBounds("p_norm must be >= 1".into()));
        }
        if !(self.altitude_range.0 < self.altitude_range.1) {
            return Err(GeometryError::InvalidBounds("altitude_range must have min < max".into()));
        }
        Ok(())
    }

    pub fn t_far(&self) -> T {
        self.radius * T::lit(FAR_CAP_FACTOR)
    }

    pub fn t_near(&self) -> T {
        self.radius * T::lit(NEAR_FACTOR)
    }

    /// Stretch factor applied to the altitude axis of the vertical planes.
    pub fn vertical_scale(&self) -> T {
        let span = self.altitude_range.1 - self.altitude_range.0;
        (self.radius * T::lit(2.0) / span).max(T::one()).min(T::lit(8.0))
    }

    pub fn cast<U: Real>(&self) -> SceneBounds<U> {
        SceneBounds {
            center: self.center.cast(),
            radius: U::lit(self.radius.as_f64()),
            bg_size: U::lit(self.bg_size.as_f64()),
            p_norm: U::lit(self.p_norm.as_f64()),
            altitude_range: (
                U::lit(self.altitude_range.0.as_f64()),
                U::lit(self.altitude_range.1.as_f64()),
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>, t_near: T, t_far: T) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if (n - T::one()).abs().as_f64() > 1e-6 {
            return Err(GeometryError::InvalidRay(format!("direction norm {n} is not 1")));
        }
        if !(t_near >= T::zero() && t_near < t_far) {
            return Err(GeometryError::InvalidRay(format!("need 0 <= t_near < t_far, got [{t_near}, {t_far}]")));
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Foreground,
    Background,
}

/// Ordered samples along one ray, ready for field queries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet<T> {
    pub t_values: Vec<T>,
    pub positions: Vec<Vec3<T>>,
    pub deltas: Vec<T>,
    pub regions: Vec<Region>,
}

impl<T: Real> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_values.is_empty()
    }

    /// Builds the set from t-values that are already sorted ascending.
    pub fn from_sorted(ray: &Ray<T>, bounds: &SceneBounds<T>, t_values: Vec<T>) -> Result<Self, GeometryError> {
        if t_values.is_empty() {
            return Err(GeometryError::EmptySampleSet);
        }
        let n = t_values.len();
        let mut positions = Vec::with_capacity(n);
        let mut regions = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        for (i, &t) in t_values.iter().enumerate() {
            let xn = normalize_point(ray.at(t), bounds);
            let region = if xn.norm_p(bounds.p_norm) <= T::one() { Region::Foreground } else { Region::Background };
            positions.push(contract(xn, bounds.p_norm, bounds.bg_size));
            regions.push(region);
            deltas.push(if i + 1 < n { t_values[i + 1] - t } else { T::lit(LAST_DELTA) });
        }
        Ok(Self { t_values, positions, deltas, regions })
    }
}

pub fn normalize_point<T: Real>(x_world: Vec3<T>, bounds: &SceneBounds<T>) -> Vec3<T> {
    (x_world - bounds.center) / bounds.radius
}

/// Maps unbounded normalized space into the ball of radius `1 + b`.
pub fn contract<T: Real>(x: Vec3<T>, p: T, b: T) -> Vec3<T> {
    let n = x.norm_p(p);
    if n <= T::one() {
        return x;
    }
    x * ((T::one() + b - b / n) / n)
}

/// World-space t-interval of the ray inside the foreground ball, clamped to
/// the ray's own `[t_near, t_far]`.
pub fn foreground_interval<T: Real>(ray: &Ray<T>, bounds: &SceneBounds<T>) -> Option<(T, T)> {
    let o = normalize_point(ray.origin, bounds);
    let d = ray.direction;
    let (t0, t1) = if bounds.p_norm == T::lit(2.0) {
        let half_b = o.dot(d);
        let c = o.dot(o) - T::one();
        let disc = half_b * half_b - c;
        if disc < T::zero() {
            return None;
        }
        let s = disc.sqrt();
        (-half_b - s, -half_b + s)
    } else {
        p_ball_interval(o, d, bounds.p_norm, ray.t_far / bounds.radius)?
    };
    let entry = (t0 * bounds.radius).max(ray.t_near);
    let exit = (t1 * bounds.radius).min(ray.t_far);
    if entry < exit {
        Some((entry, exit))
    } else {
        None
    }
}

/// Numeric chord of the unit p-ball along a line (p-balls are convex, so the
/// norm along the line is convex in t).
fn p_ball_interval<T: Real>(o: Vec3<T>, d: Vec3<T>, p: T, t_max: T) -> Option<(T, T)> {
    let f = |t: T| (o + d * t).norm_p(p);
    let (mut lo, mut hi) = (-t_max, t_max);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / T::lit(3.0);
        let m2 = hi - (hi - lo) / T::lit(3.0);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let t_min = (lo + hi) / T::lit(2.0);
    if f(t_min) > T::one() {
        return None;
    }
    let bisect = |mut inside: T, mut outside: T| {
        for _ in 0..200 {
            let mid = (inside + outside) / T::lit(2.0);
            if f(mid) <= T::one() {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Some((bisect(t_min, -t_max), bisect(t_min, t_max)))
}

/// Linear samples inside the foreground region.
///
/// Without jitter the samples are `linspace(entry, exit, n)` (one sample sits
/// at the midpoint); with jitter each of `n` equal bins gets one uniform draw.
pub fn sample_foreground<T: Real, R: Rng + ?Sized>(
    ray: &Ray<T>,
    bounds: &SceneBounds<T>,
    n: usize,
    jitter: Option<&mut R>,
) -> Result<Vec<T>, GeometryError> {
    let (entry, exit) = foreground_interval(ray, bounds).ok_or(GeometryError::NoForegroundIntersection)?;
    Ok(linear_samples(entry, exit, n, jitter))
}

fn linear_samples<T: Real, R: Rng + ?Sized>(start: T, end: T, n: usize, jitter: Option<&mut R>) -> Vec<T> {
    let span = end - start;
    match jitter {
        Some(rng) => {
            let width = span / T::lit(n as f64);
            (0..n).map(|k| start + width * (T::lit(k as f64) + T::lit(rng.gen::<f64>()))).collect()
        }
        None if n == 1 => vec![start + span / T::lit(2.0)],
        None => {
            let step = span / T::lit((n - 1) as f64);
            (0..n).map(|k| start + step * T::lit(k as f64)).collect()
        }
    }
}

/// Point at fraction `s` of the way from `t_start` to `t_end`, linear in 1/t.
#[inline]
pub fn disparity_lerp<T: Real>(t_start: T, t_end: T, s: T) -> T {
    T::one() / ((T::one() - s) / t_start + s / t_end)
}

/// Background samples from `t_start` to `t_end`, uniform in disparity.
///
/// Unjittered fractions are `s_k = (k + 1) / n`, so the last sample lands on
/// `t_end`; jittered fractions are drawn from `((k) / n, (k + 1) / n]`.
pub fn sample_background_span<T: Real, R: Rng + ?Sized>(t_start: T, t_end: T, n: usize, jitter: Option<&mut R>) -> Vec<T> {
    let nf = T::lit(n as f64);
    match jitter {
        Some(rng) => (0..n)
            .map(|k| {
                let u = T::one() - T::lit(rng.gen::<f64>());
                disparity_lerp(t_start, t_end, (T::lit(k as f64) + u) / nf)
            })
            .collect(),
        None => (0..n).map(|k| disparity_lerp(t_start, t_end, T::lit((k + 1) as f64) / nf)).collect(),
    }
}

/// Distance at which the ray leaves the foreground (or `t_near` if it never
/// enters it).
pub fn background_start<T: Real>(ray: &Ray<T>, bounds: &SceneBounds<T>) -> T {
    foreground_interval(ray, bounds).map_or(ray.t_near, |(_, exit)| exit)
}

pub fn sample_background<T: Real, R: Rng + ?Sized>(
    ray: &Ray<T>,
    bounds: &SceneBounds<T>,
    n: usize,
    jitter: Option<&mut R>,
) -> Vec<T> {
    let start = background_start(ray, bounds);
    if start >= ray.t_far {
        return Vec::new();
    }
    sample_background_span(start, ray.t_far, n, jitter)
}

/// Inverse-CDF resampling from the piecewise-constant density that gives
/// interval `[t_i, t_{i+1}]` the mass `weights[i]`.
///
/// The last weight has no bounded interval and is ignored. Deterministic
/// quantiles `(k + 0.5) / n` are used without an rng; with an rng each
/// quantile is stratified within its bin. Output is sorted ascending.
pub fn resample_fine<T: Real, R: Rng + ?Sized>(t: &[T], weights: &[T], n: usize, rng: Option<&mut R>) -> Vec<T> {
    assert_eq!(t.len(), weights.len(), "weights must match t-values");
    if t.len() < 2 || n == 0 {
        return Vec::new();
    }
    let nf = T::lit(n as f64);
    let quantiles: Vec<T> = match rng {
        Some(r) => (0..n).map(|k| (T::lit(k as f64) + T::lit(r.gen::<f64>())) / nf).collect(),
        None => (0..n).map(|k| (T::lit(k as f64) + T::lit(0.5)) / nf).collect(),
    };
    let intervals = t.len() - 1;
    let mut cdf = Vec::with_capacity(intervals + 1);
    cdf.push(T::zero());
    let mut acc = T::zero();
    for &w in &weights[..intervals] {
        acc += w.max(T::zero());
        cdf.push(acc);
    }
    let total = acc;
    if !(total > T::zero()) {
        let (lo, hi) = (t[0], t[intervals]);
        return quantiles.into_iter().map(|u| lo + (hi - lo) * u).collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    for u in quantiles {
        let target = u * total;
        // quantiles ascend, so the interval pointer only moves forward
        while i + 1 < intervals && cdf[i + 1] <= target {
            i += 1;
        }
        let mass = cdf[i + 1] - cdf[i];
        let frac = if mass > T::zero() { ((target - cdf[i]) / mass).min(T::one()).max(T::zero()) } else { T::zero() };
        out.push(t[i] + (t[i + 1] - t[i]) * frac);
    }
    out
}

/// Merges foreground and background t-lists into a contracted sample set.
pub fn build_sample_set<T: Real>(
    ray: &Ray<T>,
    bounds: &SceneBounds<T>,
    t_fg: &[T],
    t_bg: &[T],
) -> Result<SampleSet<T>, GeometryError> {
    SampleSet::from_sorted(ray, bounds, merge_sorted(t_fg, t_bg))
}

/// Stable merge of two ascending lists; exact duplicates from `b` are dropped.
pub fn merge_sorted<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i] <= b[j]);
        let v = if take_a {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1]
        };
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type V = Vec3<f64>;

    fn bounds() -> SceneBounds<f64> {
        SceneBounds::new(V::new(1.0, -2.0, 0.5), 3.0)
    }

    fn no_rng() -> Option<&'static mut ChaCha8Rng> {
        None
    }

    #[test]
    fn normalize_examples() {
        let b = bounds();
        assert_eq!(normalize_point(b.center, &b), V::zero());
        assert_eq!(normalize_point(b.center + V::new(3.0, 0.0, 0.0), &b), V::new(1.0, 0.0, 0.0));
        let p = normalize_point(b.center + V::new(6.0, -3.0, 1.5), &b);
        assert!((p - V::new(2.0, -1.0, 0.5)).max_abs() < 1e-12);
    }

    #[test]
    fn contract_examples() {
        assert_eq!(contract(V::new(0.5, 0.0, 0.0), 2.0, 1.0), V::new(0.5, 0.0, 0.0));
        assert_eq!(contract(V::new(2.0, 0.0, 0.0), 2.0, 1.0), V::new(1.5, 0.0, 0.0));
        assert_eq!(contract(V::zero(), 2.0, 1.0), V::zero());
        let far = contract(V::new(1e6, 0.0, 0.0), 2.0, 1.0).norm();
        assert!(far < 2.0 && far > 2.0 - 1e-5);
    }

    #[test]
    fn contract_with_max_norm_stays_inside_cube() {
        let y = contract(V::new(3.0, -9.0, 1.0), f64::INFINITY, 1.0);
        assert!(y.max_abs() < 2.0);
        assert!((y.max_abs() - (2.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    fn axis_ray(b: &SceneBounds<f64>) -> Ray<f64> {
        let origin = b.center + V::new(-2.0 * b.radius, 0.0, 0.0);
        Ray::new(origin, V::new(1.0, 0.0, 0.0), b.t_near(), b.t_far()).unwrap()
    }

    #[test]
    fn foreground_linspace_and_midpoint() {
        let b = bounds();
        let ray = axis_ray(&b);
        let t = sample_foreground(&ray, &b, 3, no_rng()).unwrap();
        assert!((t[0] - 3.0).abs() < 1e-12 && (t[1] - 6.0).abs() < 1e-12 && (t[2] - 9.0).abs() < 1e-12);
        let t = sample_foreground(&ray, &b, 1, no_rng()).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn foreground_jitter_is_reproducible_and_binned() {
        let b = bounds();
        let ray = axis_ray(&b);
        let a = sample_foreground(&ray, &b, 8, Some(&mut ChaCha8Rng::seed_from_u64(7))).unwrap();
        let c = sample_foreground(&ray, &b, 8, Some(&mut ChaCha8Rng::seed_from_u64(7))).unwrap();
        assert_eq!(a, c);
        // replay the generator by hand
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (k, &t) in a.iter().enumerate() {
            let expect = 3.0 + 0.75 * (k as f64 + rng.gen::<f64>());
            assert!((t - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_ray_reports_no_intersection() {
        let b = bounds();
        let ray = Ray::new(b.center + V::new(0.0, 10.0, 0.0), V::new(1.0, 0.0, 0.0), 0.1, 100.0).unwrap();
        assert_eq!(sample_foreground(&ray, &b, 4, no_rng()), Err(GeometryError::NoForegroundIntersection));
        assert_eq!(background_start(&ray, &b), 0.1);
    }

    #[test]
    fn max_norm_ball_interval_matches_box() {
        let mut b = SceneBounds::new(V::zero(), 1.0);
        b.p_norm = f64::INFINITY;
        let ray = Ray::new(V::new(-3.0, 0.5, 0.2), V::new(1.0, 0.0, 0.0), 0.0, 100.0).unwrap();
        let (t0, t1) = foreground_interval(&ray, &b).unwrap();
        assert!((t0 - 2.0).abs() < 1e-9 && (t1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn background_disparity_examples() {
        assert_eq!(disparity_lerp(1.0, f64::INFINITY, 0.5), 2.0);
        assert!((disparity_lerp(1.0_f64, 1e3, 0.5) - 2.0).abs() < 0.01);
        assert!((disparity_lerp(1.0_f64, 100.0, 1e-12) - 1.0).abs() < 1e-9);
        assert_eq!(disparity_lerp(1.0, 100.0, 1.0), 100.0);
        let t = sample_background_span(1.0, 100.0, 4, no_rng());
        let expect: Vec<f64> = (1..=4).map(|k| 1.0 / ((1.0 - k as f64 / 4.0) + k as f64 / 400.0)).collect();
        for (a, e) in t.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        let disp: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        let steps: Vec<f64> = disp.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(steps.iter().all(|s| (s - steps[0]).abs() < 1e-12));
    }

    #[test]
    fn resample_concentrates_on_single_interval() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        let w = [0.0, 0.0, 1.0, 0.0, 0.0];
        let fine = resample_fine(&t, &w, 32, Some(&mut ChaCha8Rng::seed_from_u64(3)));
        assert_eq!(fine.len(), 32);
        assert!(fine.iter().all(|&x| (2.0..=3.0).contains(&x)));
        assert!(fine.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resample_flat_weights_are_uniform() {
        let t: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let w = vec![0.1; 11];
        let fine = resample_fine(&t, &w, 1000, Some(&mut ChaCha8Rng::seed_from_u64(11)));
        for k in 0..10 {
            let count = fine.iter().filter(|&&x| x >= k as f64 && x < (k + 1) as f64).count();
            assert!((count as i64 - 100).abs() <= 1, "bin {k}: {count}");
        }
    }

    #[test]
    fn resample_all_zero_falls_back_to_uniform() {
        let t = [1.0, 2.0, 5.0];
        let fine = resample_fine(&t, &[0.0; 3], 4, no_rng());
        assert_eq!(fine, vec![1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn sample_set_examples() {
        let b = bounds();
        let ray = axis_ray(&b);
        let s = build_sample_set(&ray, &b, &[4.5], &[]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.regions[0], Region::Foreground);
        assert_eq!(s.deltas[0], LAST_DELTA);

        let s = build_sample_set(&ray, &b, &[4.0, 5.0], &[10.0, 12.0]).unwrap();
        assert_eq!(s.t_values, vec![4.0, 5.0, 10.0, 12.0]);
        assert_eq!(s.regions, vec![Region::Foreground, Region::Foreground, Region::Background, Region::Background]);
        assert_eq!(&s.deltas[..3], &[1.0, 5.0, 2.0]);

        // exactly on the boundary: x_norm = (1, 0, 0)
        let s = build_sample_set(&ray, &b, &[9.0], &[]).unwrap();
        assert_eq!(s.regions[0], Region::Foreground);

        assert_eq!(build_sample_set(&ray, &b, &[], &[]), Err(GeometryError::EmptySampleSet));
    }

    #[test]
    fn bounds_validation() {
        let mut b = bounds();
        assert!(b.validate().is_ok());
        b.altitude_range = (1.0, 1.0);
        assert!(b.validate().is_err());
        let mut b = bounds();
        b.radius = 0.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn vertical_scale_is_clamped() {
        let mut b = SceneBounds::new(V::zero(), 1.0);
        b.altitude_range = (0.5, 1.1);
        assert!((b.vertical_scale() - 2.0 / 0.6).abs() < 1e-12);
        b.altitude_range = (0.0, 0.01);
        assert_eq!(b.vertical_scale(), 8.0);
        b.altitude_range = (-10.0, 10.0);
        assert_eq!(b.vertical_scale(), 1.0);
    }
}
