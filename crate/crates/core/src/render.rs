//! Volume compositing and the per-ray coarse/fine render pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Appearance, BackwardScope, FieldError, FieldScratch, RadianceField, RayContext, RayTape};
use crate::geometry::{
    foreground_interval, resample_fine, sample_background_span, GeometryError, Ray, SampleSet, SceneBounds,
};
use crate::scalar::Real;

/// Optical depth of a single sample is clamped here before exponentiation.
pub const TAU_CLAMP: f64 = 80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("sigma/color/delta lengths differ ({0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("t-values are not sorted")]
    Unsorted,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_foreground: usize,
    pub n_background: usize,
    /// Run the second, importance-sampled pass.
    pub fine: bool,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { n_foreground: 128, n_background: 64, fine: true, background: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayRadiance<T> {
    pub rgb: [T; 3],
    pub weights: Vec<T>,
    pub transmittances: Vec<T>,
    pub opacity: T,
}

#[inline]
fn optical_depth<T: Real>(sigma: T, delta: T) -> (T, bool) {
    let tau = sigma * delta;
    let lim = T::lit(TAU_CLAMP);
    if tau > lim {
        (lim, true)
    } else {
        (tau, false)
    }
}

fn check_lengths<T>(sigma: &[T], color: &[[T; 3]], delta: &[T]) -> Result<(), RenderError> {
    if sigma.len() != color.len() || sigma.len() != delta.len() {
        return Err(RenderError::LengthMismatch(sigma.len(), color.len(), delta.len()));
    }
    Ok(())
}

/// Alpha compositing along one ray; an empty ray returns the background.
pub fn composite<T: Real>(sigma: &[T], color: &[[T; 3]], delta: &[T], background: [T; 3]) -> Result<RayRadiance<T>, RenderError> {
    check_lengths(sigma, color, delta)?;
    let n = sigma.len();
    let mut weights = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut rgb = [T::zero(); 3];
    let mut t = T::one();
    for i in 0..n {
        let (tau, _) = optical_depth(sigma[i], delta[i]);
        let decay = (-tau).exp();
        let w = t * (T::one() - decay);
        trans.push(t);
        weights.push(w);
        for k in 0..3 {
            rgb[k] += w * color[i][k];
        }
        t *= decay;
    }
    for k in 0..3 {
        rgb[k] += t * background[k];
    }
    Ok(RayRadiance { rgb, weights, transmittances: trans, opacity: T::one() - t })
}

/// Adjoint of [`composite`]: `(dL/dsigma, dL/dcolor)`.
pub fn composite_backward<T: Real>(
    sigma: &[T],
    color: &[[T; 3]],
    delta: &[T],
    background: [T; 3],
    d_rgb: [T; 3],
) -> Result<(Vec<T>, Vec<[T; 3]>), RenderError> {
    check_lengths(sigma, color, delta)?;
    let n = sigma.len();
    let mut d_sigma = vec![T::zero(); n];
    let mut d_color = vec![[T::zero(); 3]; n];
    let g_dot = |c: &[T; 3]| c[0] * d_rgb[0] + c[1] * d_rgb[1] + c[2] * d_rgb[2];

    let mut taus = Vec::with_capacity(n);
    let mut t = T::one();
    let mut trans = Vec::with_capacity(n);
    let mut gw = Vec::with_capacity(n);
    for i in 0..n {
        let (tau, clamped) = optical_depth(sigma[i], delta[i]);
        let decay = (-tau).exp();
        let w = t * (T::one() - decay);
        for k in 0..3 {
            d_color[i][k] = w * d_rgb[k];
        }
        taus.push((decay, clamped));
        trans.push(t);
        gw.push(w * g_dot(&color[i]));
        t *= decay;
    }
    // suffix[i] = sum_{k > i} w_k (g . c_k) + T_final (g . bg)
    let mut suffix = t * g_dot(&background);
    for i in (0..n).rev() {
        let (decay, clamped) = taus[i];
        let d_tau = trans[i] * decay * g_dot(&color[i]) - suffix;
        d_sigma[i] = if clamped { T::zero() } else { d_tau * delta[i] };
        suffix += gw[i];
    }
    Ok((d_sigma, d_color))
}

/// Frozen sample placement for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayPlan<T> {
    pub coarse: Vec<T>,
    pub fine: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub coarse_opacity: f64,
    pub fine_opacity: f64,
    pub coarse_samples: usize,
    pub fine_samples: usize,
}

/// Coarse t-values: linear through the foreground, disparity-linear behind
/// it. Rays that miss the foreground spend the whole budget on background.
pub fn coarse_samples<T: Real, R: Rng + ?Sized>(ray: &Ray<T>, bounds: &SceneBounds<T>, cfg: &RenderConfig, mut rng: Option<&mut R>) -> Vec<T> {
    match foreground_interval(ray, bounds) {
        Some((entry, exit)) => {
            let mut t = crate::geometry::sample_foreground(ray, bounds, cfg.n_foreground, rng.as_deref_mut())
                .unwrap_or_else(|_| vec![(entry + exit) / T::lit(2.0)]);
            if exit < ray.t_far {
                t.extend(sample_background_span(exit, ray.t_far, cfg.n_background, rng));
            }
            t
        }
        None => sample_background_span(ray.t_near, ray.t_far, cfg.n_foreground + cfg.n_background, rng),
    }
}

/// Reusable per-ray state for a forward pass followed by its reverse pass.
#[derive(Clone, Debug, Default)]
pub struct RayWorkspace<T> {
    ctx: Option<RayContext<T>>,
    tape: RayTape<T>,
    coarse: SampleSet<T>,
    coarse_idx: Vec<usize>,
    merged: SampleSet<T>,
    merged_idx: Vec<usize>,
    scratch: FieldScratch<T>,
    fine_enabled: bool,
    background: [T; 3],
    d_sigma: Vec<T>,
    d_color: Vec<[T; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub coarse_rgb: [T; 3],
    /// Final color (fine pass when enabled, else coarse).
    pub rgb: [T; 3],
    pub plan: RayPlan<T>,
    pub diagnostics: Diagnostics,
}

fn gather<T: Real>(tape: &RayTape<T>, idx: &[usize]) -> (Vec<T>, Vec<[T; 3]>) {
    idx.iter().map(|&i| (tape.samples[i].sigma, tape.samples[i].color)).unzip()
}

/// Runs the coarse pass, resamples, and composites the merged set. With
/// `plan` given the sample placement is reused exactly; otherwise it is
/// drawn (jittered with `rng`, deterministic without).
#[allow(clippy::too_many_arguments)]
pub fn render_forward<T: Real, R: Rng + ?Sized>(
    field: &RadianceField<T>,
    ray: &Ray<T>,
    bounds: &SceneBounds<T>,
    app: Appearance<'_, T>,
    cfg: &RenderConfig,
    plan: Option<&RayPlan<T>>,
    mut rng: Option<&mut R>,
    ws: &mut RayWorkspace<T>,
) -> Result<RenderOutput<T>, RenderError> {
    let ctx = field.ray_context(ray.direction, app)?;
    ws.tape.clear();
    ws.coarse_idx.clear();
    ws.merged_idx.clear();
    ws.fine_enabled = cfg.fine;
    ws.background = cfg.background.map(T::lit);

    let coarse_t = match plan {
        Some(p) => p.coarse.clone(),
        None => coarse_samples(ray, bounds, cfg, rng.as_deref_mut()),
    };
    if coarse_t.windows(2).any(|w| w[0] > w[1]) {
        return Err(RenderError::Unsorted);
    }
    ws.coarse = SampleSet::from_sorted(ray, bounds, coarse_t)?;
    for i in 0..ws.coarse.len() {
        let idx = field.eval_sample(&ctx, ws.coarse.regions[i], ws.coarse.positions[i], &mut ws.tape)?;
        ws.coarse_idx.push(idx);
    }
    let (sig, col) = gather(&ws.tape, &ws.coarse_idx);
    let coarse = composite(&sig, &col, &ws.coarse.deltas, ws.background)?;
    let mut diagnostics = Diagnostics {
        coarse_opacity: coarse.opacity.as_f64(),
        coarse_samples: ws.coarse.len(),
        ..Default::default()
    };

    let mut out_plan = RayPlan { coarse: ws.coarse.t_values.clone(), fine: Vec::new() };
    let rgb = if cfg.fine {
        let fine_t = match plan {
            Some(p) => p.fine.clone(),
            None => resample_fine(&ws.coarse.t_values, &coarse.weights, ws.coarse.len(), rng),
        };
        // merge, keeping provenance so coarse evaluations are reused
        let ct = &ws.coarse.t_values;
        let mut merged_t = Vec::with_capacity(ct.len() + fine_t.len());
        let mut source: Vec<Option<usize>> = Vec::with_capacity(merged_t.capacity());
        let (mut i, mut j) = (0, 0);
        while i < ct.len() || j < fine_t.len() {
            let take_coarse = j >= fine_t.len() || (i < ct.len() && ct[i] <= fine_t[j]);
            let (t, src) = if take_coarse {
                i += 1;
                (ct[i - 1], Some(ws.coarse_idx[i - 1]))
            } else {
                j += 1;
                (fine_t[j - 1], None)
            };
            if merged_t.last() == Some(&t) {
                continue;
            }
            merged_t.push(t);
            source.push(src);
        }
        ws.merged = SampleSet::from_sorted(ray, bounds, merged_t)?;
        for (k, src) in source.into_iter().enumerate() {
            let idx = match src {
                Some(idx) => idx,
                None => field.eval_sample(&ctx, ws.merged.regions[k], ws.merged.positions[k], &mut ws.tape)?,
            };
            ws.merged_idx.push(idx);
        }
        let (sig, col) = gather(&ws.tape, &ws.merged_idx);
        let fine = composite(&sig, &col, &ws.merged.deltas, ws.background)?;
        diagnostics.fine_opacity = fine.opacity.as_f64();
        diagnostics.fine_samples = ws.tape.samples.len() - ws.coarse.len();
        out_plan.fine = fine_t;
        fine.rgb
    } else {
        coarse.rgb
    };
    ws.ctx = Some(ctx);
    Ok(RenderOutput { coarse_rgb: coarse.rgb, rgb, plan: out_plan, diagnostics })
}

/// Reverse pass of the last [`render_forward`] on `ws`. `d_fine` is ignored
/// when the fine pass is disabled; `scope` limits which gradients are
/// accumulated. Returns the adjoint of the appearance vector used by the ray.
pub fn render_backward<T: Real>(
    field: &RadianceField<T>,
    ws: &mut RayWorkspace<T>,
    d_coarse: [T; 3],
    d_fine: [T; 3],
    grads: &mut RadianceField<T>,
    scope: BackwardScope,
) -> Result<Vec<T>, RenderError> {
    let mut ctx = ws.ctx.take().expect("render_backward called without a forward pass");
    let n = ws.tape.samples.len();
    ws.d_sigma.clear();
    ws.d_sigma.resize(n, T::zero());
    ws.d_color.clear();
    ws.d_color.resize(n, [T::zero(); 3]);

    let (sig, col) = gather(&ws.tape, &ws.coarse_idx);
    let (ds, dc) = composite_backward(&sig, &col, &ws.coarse.deltas, ws.background, d_coarse)?;
    for (k, &idx) in ws.coarse_idx.iter().enumerate() {
        ws.d_sigma[idx] += ds[k];
        for c in 0..3 {
            ws.d_color[idx][c] += dc[k][c];
        }
    }
    if ws.fine_enabled {
        let (sig, col) = gather(&ws.tape, &ws.merged_idx);
        let (ds, dc) = composite_backward(&sig, &col, &ws.merged.deltas, ws.background, d_fine)?;
        for (k, &idx) in ws.merged_idx.iter().enumerate() {
            ws.d_sigma[idx] += ds[k];
            for c in 0..3 {
                ws.d_color[idx][c] += dc[k][c];
            }
        }
    }
    for idx in 0..n {
        let (ds, dc) = (ws.d_sigma[idx], ws.d_color[idx]);
        if ds == T::zero() && dc.iter().all(|&v| v == T::zero()) {
            continue;
        }
        field.backward_sample(&mut ctx, &ws.tape, idx, ds, dc, grads, &mut ws.scratch, scope)?;
    }
    Ok(field.finish_ray(&mut ctx, grads, &mut ws.scratch))
}

/// Forward-only render of one ray with deterministic sample placement.
pub fn render_ray<T: Real>(
    field: &RadianceField<T>,
    ray: &Ray<T>,
    bounds: &SceneBounds<T>,
    app: Appearance<'_, T>,
    cfg: &RenderConfig,
) -> Result<([T; 3], Diagnostics), RenderError> {
    let mut ws = RayWorkspace::default();
    let out = render_forward::<T, rand_chacha::ChaCha8Rng>(field, ray, bounds, app, cfg, None, None, &mut ws)?;
    Ok((out.rgb, out.diagnostics))
}
