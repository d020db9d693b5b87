//! Image rendering and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{psnr, ssim, Camera, DataError, Image, SceneDataset, Split};
use crate::field::{Appearance, BackwardScope, RadianceField};
use crate::geometry::SceneBounds;
use crate::optim::{adam_step, ray_sq_error, AdamConfig, AdamState, OptimError};
use crate::params::{Parameters, Tensor, TensorClass, TensorMut};
use crate::render::{render_backward, render_forward, RayWorkspace, RenderConfig, RenderError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("split has no views")]
    EmptySplit,
}

/// Embedding used for views without a trained row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum AppearanceProtocol {
    /// Element-wise mean of the training rows.
    Mean,
    /// Fit a fresh embedding on the left half of the target image with all
    /// other parameters frozen; metrics are still taken on the full image.
    OptimizeLeftHalf { iterations: usize, batch_rays: usize, learning_rate: f64 },
}

impl AppearanceProtocol {
    pub fn optimize_left_half() -> Self {
        AppearanceProtocol::OptimizeLeftHalf { iterations: 60, batch_rays: 256, learning_rate: 2e-2 }
    }
}

impl std::str::FromStr for AppearanceProtocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "optimize-left-half" => Ok(Self::optimize_left_half()),
            other => Err(format!("unknown appearance protocol '{other}' (mean, optimize-left-half)")),
        }
    }
}

/// A single free embedding vector, wrapped so the optimizer can step it.
struct Embedding<T>(Vec<T>);

impl<T: Real> Parameters<T> for Embedding<T> {
    fn tensors(&self, _prefix: &str) -> Vec<Tensor<'_, T>> {
        vec![Tensor { name: "embedding".into(), class: TensorClass::Appearance, data: &self.0 }]
    }

    fn tensors_mut(&mut self, _prefix: &str) -> Vec<TensorMut<'_, T>> {
        vec![TensorMut { name: "embedding".into(), class: TensorClass::Appearance, data: &mut self.0 }]
    }
}

/// Renders every pixel of `camera`, splitting rows across `threads`.
pub fn render_image<T: Real>(
    field: &RadianceField<T>,
    camera: &Camera,
    bounds: &SceneBounds<T>,
    app: Appearance<'_, T>,
    cfg: &RenderConfig,
    threads: usize,
) -> Result<Image, EvalError> {
    let (w, h) = (camera.width, camera.height);
    let render_rows = |rows: std::ops::Range<usize>| -> Result<Vec<f32>, EvalError> {
        let mut ws = RayWorkspace::default();
        let mut out = Vec::with_capacity(rows.len() * w * 3);
        for y in rows {
            for x in 0..w {
                let ray = camera.pixel_ray(x, y, bounds)?;
                let o = render_forward::<T, ChaCha8Rng>(field, &ray, bounds, app, cfg, None, None, &mut ws)?;
                out.extend(o.rgb.iter().map(|v| v.as_f64() as f32));
            }
        }
        Ok(out)
    };
    let threads = threads.clamp(1, h.max(1));
    let data = if threads == 1 {
        render_rows(0..h)?
    } else {
        let per = h.div_ceil(threads);
        let parts: Vec<Result<Vec<f32>, EvalError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|i| {
                    let render_rows = &render_rows;
                    s.spawn(move || render_rows((i * per).min(h)..((i + 1) * per).min(h)))
                })
                .collect();
            handles.into_iter().map(|j| j.join().expect("render worker panicked")).collect()
        });
        let mut data = Vec::with_capacity(w * h * 3);
        for p in parts {
            data.extend(p?);
        }
        data
    };
    Ok(Image { width: w, height: h, data })
}

/// Fits an embedding to the left half of `target` by Adam on the photometric
/// loss, starting from the mean training row.
#[allow(clippy::too_many_arguments)]
pub fn fit_appearance<T: Real>(
    field: &RadianceField<T>,
    camera: &Camera,
    target: &Image,
    bounds: &SceneBounds<T>,
    cfg: &RenderConfig,
    iterations: usize,
    batch_rays: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Vec<T>, EvalError> {
    let half = (camera.width / 2).max(1);
    let mut pixels: Vec<(usize, usize)> = (0..camera.height).flat_map(|y| (0..half).map(move |x| (x, y))).collect();
    let mut emb = Embedding(field.appearance.mean());
    let mut grad = Embedding(vec![T::zero(); emb.0.len()]);
    let mut adam = AdamState::new(&emb);
    let mut scratch = field.zeros_like();
    let mut ws = RayWorkspace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::lit(if cfg.fine { 0.5 } else { 1.0 } / batch_rays.min(pixels.len()) as f64);
    for _ in 0..iterations {
        pixels.shuffle(&mut rng);
        grad.0.fill(T::zero());
        for &(x, y) in pixels.iter().take(batch_rays) {
            let ray = camera.pixel_ray(x, y, bounds)?;
            let gt = target.pixel(x, y).map(|v| T::lit(v as f64));
            let o = render_forward::<T, ChaCha8Rng>(field, &ray, bounds, Appearance::Vector(&emb.0), cfg, None, None, &mut ws)?;
            let (_, dc) = ray_sq_error(o.coarse_rgb, gt, scale);
            let (_, df) = ray_sq_error(o.rgb, gt, scale);
            let d_app = render_backward(field, &mut ws, dc, df, &mut scratch, BackwardScope::Appearance)?;
            for (g, v) in grad.0.iter_mut().zip(d_app) {
                *g += v;
            }
        }
        adam_step(&mut emb, &grad, &mut adam, learning_rate, &AdamConfig::default())?;
    }
    Ok(emb.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,image,psnr,ssim\n");
        for v in &self.views {
            s.push_str(&format!("{},{},{:.4},{:.5}\n", v.view, v.image, v.psnr, v.ssim));
        }
        s.push_str(&format!("mean,,{:.4},{:.5}\n", self.mean_psnr, self.mean_ssim));
        s
    }
}

/// Renders and scores every view of `split`; returns the metrics and the
/// rendered images in view order. Train views use their own rows.
pub fn evaluate<T: Real>(
    field: &RadianceField<T>,
    dataset: &SceneDataset,
    split: Split,
    protocol: AppearanceProtocol,
    cfg: &RenderConfig,
    threads: usize,
) -> Result<(EvalReport, Vec<Image>), EvalError> {
    let views = dataset.split_indices(split);
    if views.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let bounds: SceneBounds<T> = dataset.bounds.cast();
    let cfg = RenderConfig { background: dataset.background, ..cfg.clone() };
    let mean = field.appearance.mean();
    let mut metrics = Vec::with_capacity(views.len());
    let mut images = Vec::with_capacity(views.len());
    for &v in &views {
        let cam = &dataset.cameras[v];
        let gt = &dataset.images[v];
        let fitted;
        let app = match (cam.appearance_id, protocol) {
            (Some(id), _) if id < field.appearance.count() => Appearance::Image(id),
            (_, AppearanceProtocol::Mean) => Appearance::Vector(&mean),
            (_, AppearanceProtocol::OptimizeLeftHalf { iterations, batch_rays, learning_rate }) => {
                fitted = fit_appearance(field, cam, gt, &bounds, &cfg, iterations, batch_rays, learning_rate, v as u64)?;
                Appearance::Vector(&fitted)
            }
        };
        let mut img = render_image(field, cam, &bounds, app, &cfg, threads)?;
        img.quantize();
        metrics.push(ViewMetrics { view: v, image: cam.image.clone(), psnr: psnr(&img, gt)?, ssim: ssim(&img, gt)? });
        images.push(img);
    }
    let n = metrics.len() as f64;
    let mean_psnr = metrics.iter().map(|m| m.psnr).sum::<f64>() / n;
    let mean_ssim = metrics.iter().map(|m| m.ssim).sum::<f64>() / n;
    Ok((EvalReport { views: metrics, mean_psnr, mean_ssim }, images))
}
