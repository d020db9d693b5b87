use hybrid_field::checkpoint::{load_checkpoint, save_checkpoint};
use hybrid_field::data::{generate_synthetic, psnr, SceneDataset, Split, SyntheticSceneSpec};
use hybrid_field::encoding::{EncoderKind, HashGridConfig, PlaneSetConfig};
use hybrid_field::eval::render_image;
use hybrid_field::field::{Appearance, FieldConfig};
use hybrid_field::optim::{train, StepMetrics, TrainConfig, Trainer};
use hybrid_field::{FieldF64, ModelConfig, Parameters, RenderConfig};

fn spec(width: usize, height: usize, count: usize) -> SyntheticSceneSpec {
    let mut s = SyntheticSceneSpec::from_toml(include_str!("../../cli/assets/desk_small.toml")).unwrap();
    s.width = width;
    s.height = height;
    s.cameras.count = count;
    s
}

fn small_model() -> ModelConfig {
    let hash = HashGridConfig { levels: 4, table_size: 1 << 12, feat_dim: 2, res_min: 4, res_max: 32 };
    ModelConfig {
        encoder: EncoderKind::Hybrid,
        hash: hash.clone(),
        planes: PlaneSetConfig { resolutions: vec![16, 32], feat_dim: 2, vertical_scale: 1.0 },
        background_hash: hash,
        field: FieldConfig { density_hidden: vec![16], color_hidden: vec![16, 16], geo_dim: 15, appearance_dim: 4, color_uses_planes: true },
        auto_vertical_scale: true,
    }
}

fn config(iterations: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_rays: batch,
        learning_rate: 1e-2,
        seed: 5,
        render: RenderConfig { n_foreground: 8, n_background: 4, fine: true, background: [0.0; 3] },
        ..TrainConfig::default()
    }
}

fn field(ds: &SceneDataset, seed: u64) -> FieldF64 {
    FieldF64::new(&small_model(), &ds.bounds, ds.appearance_count(), seed)
}

fn losses(log: &[StepMetrics]) -> Vec<u64> {
    log.iter().map(|m| m.loss.to_bits()).collect()
}

#[test]
fn overfits_a_single_small_view() {
    // 2 cameras, view 0 held out, one 8x8 training image
    let mut s = spec(8, 8, 2);
    s.cameras.test_every = 2;
    let ds = generate_synthetic(&s).unwrap();
    assert_eq!(ds.appearance_count(), 1);
    let (trainer, log) = train(&ds, field(&ds, 0), config(600, 64)).unwrap();
    let v = ds.split_indices(Split::Train)[0];
    let cfg = RenderConfig { background: ds.background, ..trainer.config.render.clone() };
    let bounds = ds.bounds.cast();
    let img = render_image(&trainer.field, &ds.cameras[v], &bounds, Appearance::Image(0), &cfg, 1).unwrap();
    let p = psnr(&img, &ds.images[v]).unwrap();
    assert!(p > 35.0, "train-view PSNR {p:.2} dB, last loss {}", log.last().unwrap().loss);
}

#[test]
fn equal_seeds_give_identical_logs() {
    let ds = generate_synthetic(&spec(12, 12, 4)).unwrap();
    let run = |threads| {
        let cfg = TrainConfig { threads, ..config(8, 32) };
        losses(&train(&ds, field(&ds, 1), cfg).unwrap().1)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(1));
    let other = TrainConfig { seed: 6, ..config(8, 32) };
    assert_ne!(a, losses(&train(&ds, field(&ds, 1), other).unwrap().1));
}

#[test]
fn threaded_batches_match_within_reassociation() {
    let ds = generate_synthetic(&spec(12, 12, 4)).unwrap();
    let one = train(&ds, field(&ds, 1), config(5, 32)).unwrap().1;
    let two = train(&ds, field(&ds, 1), TrainConfig { threads: 2, ..config(5, 32) }).unwrap().1;
    for (a, b) in one.iter().zip(&two) {
        assert!((a.loss - b.loss).abs() <= 1e-9 * a.loss.abs(), "{} vs {}", a.loss, b.loss);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ds = generate_synthetic(&spec(12, 12, 4)).unwrap();
    let (trainer, _) = train(&ds, field(&ds, 2), config(3, 16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &small_model(), &ds.bounds, &trainer.field, Some(&trainer.adam), serde_json::json!({"k": 1})).unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(ck.header.step, 3);
    assert_eq!(ck.header.meta["k"], 1);
    let bits = |f: &FieldF64| f.tensors("").iter().flat_map(|t| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&ck.field), bits(&trainer.field));
    assert_eq!(ck.adam.unwrap(), trainer.adam);
}

#[test]
fn resumed_training_continues_the_same_curve() {
    let ds = generate_synthetic(&spec(12, 12, 4)).unwrap();
    let full = train(&ds, field(&ds, 3), config(12, 16)).unwrap().1;

    let (first, mut log) = train(&ds, field(&ds, 3), config(6, 16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&path, &small_model(), &ds.bounds, &first.field, Some(&first.adam), serde_json::Value::Null).unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    let mut resumed = Trainer::resume(ck.field, ck.adam.unwrap(), config(12, 16), &ds).unwrap();
    resumed
        .run(&ds, |_, m| {
            log.push(*m);
            Ok(())
        })
        .unwrap();
    assert_eq!(losses(&log), losses(&full));
    assert_eq!(log.iter().map(|m| m.step).collect::<Vec<_>>(), (1..=12).collect::<Vec<_>>());
}
