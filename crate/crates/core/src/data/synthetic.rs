//! Analytic ground-truth scenes: opaque spheres and boxes on a ground plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{Camera, Split};
use super::dataset::SceneDataset;
use super::image::Image;
use super::DataError;
use crate::geometry::{disparity_lerp, foreground_interval, Ray, SampleSet, SceneBounds};
use crate::render::composite;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Sphere radius (first component) or box half-extents.
    pub size: Vec<f64>,
    pub albedo: [f64; 3],
}

impl Primitive {
    fn half_extents(&self) -> Vec3<f64> {
        match self.size.as_slice() {
            [s] => Vec3::splat(*s),
            [a, b, c] => Vec3::new(*a, *b, *c),
            _ => Vec3::splat(self.size.first().copied().unwrap_or(0.0)),
        }
    }

    pub fn contains(&self, x: Vec3<f64>) -> bool {
        let c = Vec3::from(self.center);
        match self.kind {
            PrimitiveKind::Sphere => (x - c).norm() <= self.size[0],
            PrimitiveKind::Box => {
                let h = self.half_extents();
                let d = x - c;
                d.x.abs() <= h.x && d.y.abs() <= h.y && d.z.abs() <= h.z
            }
        }
    }

    /// Outward normal of the nearest face (sphere: radial).
    pub fn normal(&self, x: Vec3<f64>) -> Vec3<f64> {
        let d = x - Vec3::from(self.center);
        match self.kind {
            PrimitiveKind::Sphere => {
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::new(0.0, 0.0, 1.0)
                }
            }
            PrimitiveKind::Box => {
                let h = self.half_extents();
                let r = [d.x / h.x, d.y / h.y, d.z / h.z];
                let axis = (0..3).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())).unwrap_or(2);
                let mut n = Vec3::zero();
                n[axis] = r[axis].signum();
                n
            }
        }
    }

    /// Radius of the smallest ball around `center` containing the primitive.
    fn reach(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Sphere => self.size[0],
            PrimitiveKind::Box => self.half_extents().norm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    pub height: f64,
    pub albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub count: usize,
    pub orbit_radius: f64,
    /// Camera heights, cycled through along the orbit.
    pub altitudes: Vec<f64>,
    pub target: [f64; 3],
    /// Every `test_every`-th view (starting at 0) is held out.
    pub test_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub background: [f64; 3],
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub brightness_range: [f64; 2],
    /// Each of the foreground and background spans gets this many samples.
    pub oracle_samples: usize,
    pub bounds: BoundsSpec,
    pub ground: Option<GroundSpec>,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
    pub cameras: TrajectorySpec,
}

impl SyntheticSceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Spec(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    /// Oracle density inside primitives, in world units.
    pub fn kappa(&self) -> f64 {
        100.0 / self.bounds.radius
    }

    pub fn scene_bounds(&self) -> SceneBounds<f64> {
        let mut b = SceneBounds::new(Vec3::from(self.bounds.center), self.bounds.radius);
        let top = self.cameras.altitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = self.ground.as_ref().map_or(b.center.z - b.radius, |g| g.height);
        b.altitude_range = (bottom, top);
        b
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.cameras.count == 0 {
            return bad("no cameras".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad(format!("fov_deg {} out of range", self.fov_deg));
        }
        let [lo, hi] = self.brightness_range;
        if !(0.7..=1.3).contains(&lo) || !(0.7..=1.3).contains(&hi) || lo > hi {
            return bad(format!("brightness range [{lo}, {hi}] must lie in [0.7, 1.3]"));
        }
        if self.cameras.altitudes.is_empty() || self.cameras.test_every == 0 {
            return bad("trajectory needs altitudes and test_every >= 1".into());
        }
        if self.oracle_samples < 256 {
            return bad("oracle_samples must be at least 256".into());
        }
        if Vec3::from(self.light_dir).norm() == 0.0 {
            return bad("light_dir must be non-zero".into());
        }
        let center = Vec3::from(self.bounds.center);
        for (i, p) in self.primitives.iter().enumerate() {
            let ok_size = match p.kind {
                PrimitiveKind::Sphere => p.size.len() == 1,
                PrimitiveKind::Box => p.size.len() == 1 || p.size.len() == 3,
            };
            if !ok_size || p.size.iter().any(|&s| !(s > 0.0)) {
                return bad(format!("primitive {i}: bad size {:?}", p.size));
            }
            if (Vec3::from(p.center) - center).norm() + p.reach() > self.bounds.radius {
                return bad(format!("primitive {i} is not inside the foreground ball"));
            }
        }
        self.scene_bounds().validate().map_err(|e| DataError::Spec(e.to_string()))
    }

    pub fn cameras(&self) -> Vec<Camera> {
        let t = &self.cameras;
        let target = Vec3::from(t.target);
        let mut train_id = 0;
        (0..t.count)
            .map(|k| {
                let angle = std::f64::consts::TAU * k as f64 / t.count as f64;
                let alt = t.altitudes[k % t.altitudes.len()];
                let eye = Vec3::new(
                    target.x + t.orbit_radius * angle.cos(),
                    target.y + t.orbit_radius * angle.sin(),
                    alt,
                );
                let mut cam = Camera::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0), self.width, self.height, self.fov_deg);
                cam.image = format!("view_{k:03}.png");
                if k % t.test_every == 0 {
                    cam.split = Split::Test;
                } else {
                    cam.split = Split::Train;
                    cam.appearance_id = Some(train_id);
                    train_id += 1;
                }
                cam
            })
            .collect()
    }

    /// Per-view brightness multipliers drawn from the seed.
    pub fn brightness(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let [lo, hi] = self.brightness_range;
        (0..self.cameras.count).map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect()
    }
}

fn shade(albedo: [f64; 3], normal: Vec3<f64>, spec: &SyntheticSceneSpec) -> [f64; 3] {
    let l = Vec3::from(spec.light_dir).normalized();
    let f = spec.ambient + (1.0 - spec.ambient) * normal.dot(l).max(0.0);
    albedo.map(|a| a * f)
}

/// Ground-truth density and color at a world point. Primitives take
/// precedence over the ground half-space; empty space has `sigma = 0`.
pub fn oracle_radiance(x: Vec3<f64>, _d: Vec3<f64>, spec: &SyntheticSceneSpec) -> (f64, [f64; 3]) {
    for p in &spec.primitives {
        if p.contains(x) {
            return (spec.kappa(), shade(p.albedo, p.normal(x), spec));
        }
    }
    if let Some(g) = &spec.ground {
        if x.z <= g.height {
            return (spec.kappa(), shade(g.albedo, Vec3::new(0.0, 0.0, 1.0), spec));
        }
    }
    (0.0, [0.0; 3])
}

/// Dense oracle t-values: `n` linear samples through the foreground ball
/// and `n` disparity-linear samples behind it.
pub fn oracle_samples(ray: &Ray<f64>, bounds: &SceneBounds<f64>, n: usize) -> Vec<f64> {
    let (mut t, bg_start) = match foreground_interval(ray, bounds) {
        Some((a, b)) => {
            let step = (b - a) / n as f64;
            ((0..n).map(|k| a + step * (k as f64 + 0.5)).collect::<Vec<_>>(), b)
        }
        None => (Vec::new(), ray.t_near),
    };
    if bg_start < ray.t_far {
        t.extend((0..n).map(|k| disparity_lerp(bg_start, ray.t_far, (k as f64 + 0.5) / n as f64)));
    }
    t
}

/// Oracle pixel color along one ray, before the brightness multiplier.
pub fn oracle_ray(ray: &Ray<f64>, bounds: &SceneBounds<f64>, spec: &SyntheticSceneSpec, n: usize) -> [f64; 3] {
    let t = oracle_samples(ray, bounds, n);
    let set = SampleSet::from_sorted(ray, bounds, t).expect("sorted oracle samples");
    let (sigma, color): (Vec<f64>, Vec<[f64; 3]>) =
        set.t_values.iter().map(|&t| oracle_radiance(ray.at(t), ray.direction, spec)).unzip();
    // the final sample stands for everything beyond the far cap: sky
    composite(&sigma, &color, &set.deltas, spec.background).expect("matching lengths").rgb
}

/// Renders every camera of the trajectory against the oracle.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SceneDataset, DataError> {
    spec.validate()?;
    let bounds = spec.scene_bounds();
    let cameras = spec.cameras();
    for (k, cam) in cameras.iter().enumerate() {
        let o = cam.origin();
        if spec.primitives.iter().any(|p| p.contains(o)) || spec.ground.as_ref().is_some_and(|g| o.z <= g.height) {
            return Err(DataError::CameraInsidePrimitive(k));
        }
    }
    let gains = spec.brightness();
    let mut images = Vec::with_capacity(cameras.len());
    for (cam, &gain) in cameras.iter().zip(&gains) {
        let mut img = Image::new(cam.width, cam.height);
        for py in 0..cam.height {
            for px in 0..cam.width {
                let ray = cam.pixel_ray(px, py, &bounds)?;
                let rgb = oracle_ray(&ray, &bounds, spec, spec.oracle_samples);
                img.set_pixel(px, py, rgb.map(|c| (c * gain) as f32));
            }
        }
        img.quantize();
        images.push(img);
    }
    Ok(SceneDataset { cameras, images, bounds, background: [0.0; 3] })
}
