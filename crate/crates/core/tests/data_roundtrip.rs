use hybrid_field::data::{generate_synthetic, Camera, SceneDataset, Split, SyntheticSceneSpec, MANIFEST_FILE};
use hybrid_field::field::Appearance;
use hybrid_field::gradcheck::micro_model;
use hybrid_field::render::render_ray;
use hybrid_field::{FieldF64, RenderConfig, SceneBounds, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPEC: &str = r#"
seed = 4
width = 16
height = 12
fov_deg = 55.0
background = [0.6, 0.7, 0.9]
light_dir = [0.3, 0.2, 0.9]
ambient = 0.3
brightness_range = [0.9, 1.1]
oracle_samples = 256

[bounds]
center = [0.0, 0.0, 0.4]
radius = 1.0

[ground]
height = 0.0
albedo = [0.5, 0.5, 0.4]

[[primitives]]
kind = "sphere"
center = [0.0, 0.0, 0.3]
size = [0.3]
albedo = [0.8, 0.2, 0.2]

[[primitives]]
kind = "box"
center = [0.4, -0.3, 0.15]
size = [0.1, 0.15, 0.15]
albedo = [0.2, 0.7, 0.3]

[cameras]
count = 6
orbit_radius = 1.7
altitudes = [0.8, 1.0]
target = [0.0, 0.0, 0.2]
test_every = 3
"#;

fn spec() -> SyntheticSceneSpec {
    SyntheticSceneSpec::from_toml(SPEC).unwrap()
}

#[test]
fn dataset_survives_save_and_load() {
    let ds = generate_synthetic(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = SceneDataset::load(dir.path()).unwrap();
    // images pass through 8-bit PNG; the generator already quantizes
    assert_eq!(back, ds);
    assert_eq!(ds.split_indices(Split::Test), vec![0, 3]);
    assert_eq!(ds.appearance_count(), 4);
    let ids: Vec<_> = ds.split_indices(Split::Train).iter().map(|&i| ds.cameras[i].appearance_id.unwrap()).collect();
    assert_eq!(ids, vec![0, 1, 2, 3]);
}

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_synthetic(&spec()).unwrap().save(a.path()).unwrap();
    generate_synthetic(&spec()).unwrap().save(b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == MANIFEST_FILE));
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn manifest_rejects_unknown_version() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&spec()).unwrap().save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 7", 1);
    std::fs::write(&path, text).unwrap();
    assert!(SceneDataset::load(dir.path()).is_err());
}

#[test]
fn pixel_rays_reproject_to_their_pixels() {
    let cam = Camera::look_at(Vec3::new(2.0, -1.0, 1.2), Vec3::new(0.0, 0.2, 0.3), Vec3::new(0.0, 0.0, 1.0), 40, 30, 65.0);
    let b = SceneBounds::new(Vec3::zero(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let (px, py) = (rng.gen_range(0..40), rng.gen_range(0..30));
        let ray = cam.pixel_ray::<f64>(px, py, &b).unwrap();
        let (u, v) = cam.project(ray.at(rng.gen_range(0.5..20.0)));
        assert!((u - (px as f64 + 0.5)).abs() < 1e-9 && (v - (py as f64 + 0.5)).abs() < 1e-9);
    }
}

#[test]
fn zero_field_renders_mid_grey() {
    // sigma = exp(0) = 1 everywhere and the last delta absorbs all light
    let b = SceneBounds::new(Vec3::new(0.0, 0.0, 0.5), 1.0);
    let mut field = FieldF64::new(&micro_model(), &b, 2, 0);
    hybrid_field::params::zero_all(&mut field);
    let cfg = RenderConfig { n_foreground: 8, n_background: 4, fine: true, background: [1.0, 0.0, 0.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
        let ray = hybrid_field::Ray::new(Vec3::new(0.2, -0.1, 0.6), d, b.t_near(), b.t_far()).unwrap();
        let (rgb, _) = render_ray(&field, &ray, &b, Appearance::Image(1), &cfg).unwrap();
        for c in rgb {
            assert!((c - 0.5).abs() < 1e-12, "{rgb:?}");
        }
    }
}
