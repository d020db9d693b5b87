use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::ray_sq_error;
use super::OptimError;
use crate::data::{psnr_from_mse, SceneDataset, Split};
use crate::field::{Appearance, BackwardScope, RadianceField};
use crate::geometry::SceneBounds;
use crate::params::{accumulate, zero_all, Parameters};
use crate::render::{render_backward, render_forward, RayWorkspace, RenderConfig};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Decay the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    pub threads: usize,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            batch_rays: 5 * 1024,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            cosine_decay: false,
            checkpoint_every: 0,
            threads: 1,
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_rays == 0 {
            return Err("batch_rays must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err("adam betas must be in [0, 1) and eps positive".into());
        }
        if self.render.n_foreground == 0 {
            return Err("render.n_foreground must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if !self.cosine_decay || self.iterations == 0 {
            return self.learning_rate;
        }
        let p = (step as f64 / self.iterations as f64).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub train_psnr: f64,
    pub wall_ms: u64,
}

/// Stable 64-bit mixing of seed components (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

#[derive(Clone, Copy, Debug)]
struct PixelRef {
    image: u32,
    px: u32,
    py: u32,
}

struct Worker<T> {
    grads: RadianceField<T>,
    ws: RayWorkspace<T>,
}

#[derive(Default)]
struct ChunkStats {
    loss: f64,
    fine_sq: f64,
    error: Option<String>,
}

/// Owns the model, its optimizer state and the per-worker buffers.
pub struct Trainer<T: Real> {
    pub field: RadianceField<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
    pub bounds: SceneBounds<T>,
    /// Wall time accumulated by earlier sessions of a resumed run.
    pub prior_ms: u64,
    pixels: Vec<PixelRef>,
    workers: Vec<Worker<T>>,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(field: RadianceField<T>, config: TrainConfig, dataset: &SceneDataset) -> Result<Self, OptimError> {
        let adam = AdamState::new(&field);
        Self::resume(field, adam, config, dataset)
    }

    /// The dataset's background color replaces `config.render.background`.
    pub fn resume(field: RadianceField<T>, adam: AdamState<T>, mut config: TrainConfig, dataset: &SceneDataset) -> Result<Self, OptimError> {
        config.validate().map_err(OptimError::Config)?;
        config.render.background = dataset.background;
        let mut pixels = Vec::new();
        for i in dataset.split_indices(Split::Train) {
            let cam = &dataset.cameras[i];
            for py in 0..cam.height {
                for px in 0..cam.width {
                    pixels.push(PixelRef { image: i as u32, px: px as u32, py: py as u32 });
                }
            }
        }
        if pixels.is_empty() {
            return Err(OptimError::Config("dataset has no training pixels".into()));
        }
        if field.appearance.count() < dataset.appearance_count() {
            return Err(OptimError::Config("model has fewer appearance rows than training images".into()));
        }
        let threads = config.threads.clamp(1, config.batch_rays);
        let workers = (0..threads).map(|_| Worker { grads: field.zeros_like(), ws: RayWorkspace::default() }).collect();
        Ok(Self {
            field,
            adam,
            bounds: dataset.bounds.cast(),
            config,
            prior_ms: 0,
            pixels,
            workers,
            started: Instant::now(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Gradient of the last completed step (summed over workers).
    pub fn last_gradient(&self) -> &RadianceField<T> {
        &self.workers[0].grads
    }

    /// One optimizer iteration over a freshly sampled ray batch.
    pub fn step(&mut self, dataset: &SceneDataset) -> Result<StepMetrics, OptimError> {
        let step = self.adam.step;
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step, 0]));
        let batch: Vec<PixelRef> = (0..cfg.batch_rays).map(|_| self.pixels[rng.gen_range(0..self.pixels.len())]).collect();

        let chunk = batch.len().div_ceil(self.workers.len());
        let field = &self.field;
        let bounds = &self.bounds;
        let render = &cfg.render;
        let n = batch.len();
        let seed = cfg.seed;
        let run = |worker: &mut Worker<T>, offset: usize, rays: &[PixelRef]| -> ChunkStats {
            zero_all(&mut worker.grads);
            let mut stats = ChunkStats::default();
            let scale = T::one() / T::lit(n as f64);
            let half = if render.fine { T::lit(0.5) } else { T::one() };
            for (k, p) in rays.iter().enumerate() {
                let cam = &dataset.cameras[p.image as usize];
                let ray = match cam.pixel_ray::<T>(p.px as usize, p.py as usize, bounds) {
                    Ok(r) => r,
                    Err(e) => {
                        stats.error = Some(e.to_string());
                        return stats;
                    }
                };
                let gt = dataset.images[p.image as usize].pixel(p.px as usize, p.py as usize).map(|v| T::lit(v as f64));
                let app = Appearance::Image(cam.appearance_id.unwrap_or(0));
                let mut jitter = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, step, 1 + (offset + k) as u64]));
                let out = match render_forward(field, &ray, bounds, app, render, None, Some(&mut jitter), &mut worker.ws) {
                    Ok(o) => o,
                    Err(e) => {
                        stats.error = Some(e.to_string());
                        return stats;
                    }
                };
                let (ec, dc) = ray_sq_error(out.coarse_rgb, gt, scale * half);
                let (ef, df) = if render.fine { ray_sq_error(out.rgb, gt, scale * half) } else { (T::zero(), [T::zero(); 3]) };
                stats.loss += (ec + ef).as_f64();
                let fine_err: f64 = (0..3).map(|c| (out.rgb[c] - gt[c]).as_f64().powi(2)).sum();
                stats.fine_sq += fine_err;
                if let Err(e) = render_backward(field, &mut worker.ws, dc, df, &mut worker.grads, BackwardScope::Full) {
                    stats.error = Some(e.to_string());
                    return stats;
                }
            }
            stats
        };

        let stats: Vec<ChunkStats> = if self.workers.len() == 1 {
            vec![run(&mut self.workers[0], 0, &batch)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .workers
                    .iter_mut()
                    .zip(batch.chunks(chunk))
                    .enumerate()
                    .map(|(i, (w, rays))| {
                        let run = &run;
                        s.spawn(move || run(w, i * chunk, rays))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
            })
        };
        if let Some(e) = stats.iter().find_map(|s| s.error.clone()) {
            return Err(OptimError::Render(e));
        }
        let used = batch.chunks(chunk).count();
        if used < self.workers.len() {
            for w in &mut self.workers[used..] {
                zero_all(&mut w.grads);
            }
        }
        let (first, rest) = self.workers.split_first_mut().expect("at least one worker");
        for w in rest.iter() {
            accumulate(&mut first.grads, &w.grads);
        }

        let loss: f64 = stats.iter().map(|s| s.loss).sum();
        let fine_mse = stats.iter().map(|s| s.fine_sq).sum::<f64>() / (3 * n) as f64;
        if !loss.is_finite() || !grads_finite(&first.grads) {
            return Err(OptimError::NonFinite { step, dump: self.dump(loss) });
        }
        let lr = self.config.lr_at(step);
        adam_step(&mut self.field, &self.workers[0].grads, &mut self.adam, lr, &self.config.adam)?;
        Ok(StepMetrics {
            step: self.adam.step,
            loss,
            train_psnr: psnr_from_mse(fine_mse),
            wall_ms: self.prior_ms + self.started.elapsed().as_millis() as u64,
        })
    }

    /// Per-tensor diagnostic summary used when a step goes non-finite.
    pub fn dump(&self, loss: f64) -> String {
        let mut lines = vec![format!("step {} loss {loss}", self.adam.step)];
        let grads = self.workers[0].grads.tensors("");
        for (p, g) in self.field.tensors("").iter().zip(grads) {
            let stat = |d: &[T]| {
                let bad = d.iter().filter(|v| !v.is_finite()).count();
                let max = d.iter().map(|v| v.as_f64().abs()).filter(|v| v.is_finite()).fold(0.0, f64::max);
                format!("max|.|={max:.3e} non-finite={bad}")
            };
            lines.push(format!("{}: param {} grad {}", p.name, stat(p.data), stat(g.data)));
        }
        lines.join("\n")
    }

    /// Runs until `config.iterations` steps are done, passing each step's
    /// metrics to `on_step`; a callback error stops training.
    pub fn run(
        &mut self,
        dataset: &SceneDataset,
        mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<(), OptimError>,
    ) -> Result<(), OptimError> {
        while (self.adam.step as usize) < self.config.iterations {
            let m = self.step(dataset)?;
            on_step(self, &m)?;
        }
        Ok(())
    }
}

fn grads_finite<T: Real>(g: &RadianceField<T>) -> bool {
    g.tensors("").iter().all(|t| t.data.iter().all(|v| v.is_finite()))
}

/// Trains a model built from scratch and returns it with its metrics log.
pub fn train<T: Real>(
    dataset: &SceneDataset,
    field: RadianceField<T>,
    config: TrainConfig,
) -> Result<(Trainer<T>, Vec<StepMetrics>), OptimError> {
    let mut trainer = Trainer::new(field, config, dataset)?;
    let mut log = Vec::new();
    trainer.run(dataset, |_, m| {
        log.push(*m);
        Ok(())
    })?;
    Ok((trainer, log))
}
