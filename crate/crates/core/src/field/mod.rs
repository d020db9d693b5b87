//! Radiance-field heads: density and color MLPs over an encoder, one pair
//! per region, sharing a per-image appearance table.
//!
//! Color-MLP input is laid out as `[geometry ; plane feature ; SH(d) ;
//! appearance]`. The last two blocks are constant along a ray, so their
//! first-layer product is computed once per ray ([`RayContext`]) and the
//! per-sample pass only multiplies the head `[geometry ; plane feature]`.

pub mod mlp;
pub mod sh;

pub use mlp::{Linear, Mlp};
pub use sh::{sh_basis, SH_DIM};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{EncodeError, Encoder, EncoderKind, HashGridConfig, PlaneSetConfig};
use crate::geometry::{Region, SceneBounds};
use crate::params::{join, Parameters, Tensor, TensorClass, TensorMut};
use crate::scalar::Real;
use crate::vec3::Vec3;

/// Raw density is clamped to this magnitude before exponentiation.
pub const SIGMA_RAW_CLAMP: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("view direction has norm {0}, expected 1")]
    NonUnitDirection(f64),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("appearance id {id} out of range ({count} rows)")]
    BadAppearance { id: usize, count: usize },
    #[error("appearance vector has length {got}, expected {expected}")]
    BadAppearanceDim { got: usize, expected: usize },
    #[error("tape does not match this field: {0}")]
    TapeMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub density_hidden: Vec<usize>,
    pub color_hidden: Vec<usize>,
    pub geo_dim: usize,
    pub appearance_dim: usize,
    /// Feed the plane feature (if the encoder has one) to the color MLP.
    pub color_uses_planes: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { density_hidden: vec![64], color_hidden: vec![64, 64], geo_dim: 15, appearance_dim: 48, color_uses_planes: true }
    }
}

/// Everything needed to build a [`RadianceField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub hash: HashGridConfig,
    pub planes: PlaneSetConfig,
    pub background_hash: HashGridConfig,
    pub field: FieldConfig,
    /// Derive `planes.vertical_scale` from the scene's altitude range.
    pub auto_vertical_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Hybrid,
            hash: HashGridConfig::default(),
            planes: PlaneSetConfig::default(),
            background_hash: HashGridConfig::default(),
            field: FieldConfig::default(),
            auto_vertical_scale: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.encoder != EncoderKind::PlaneOnly {
            self.hash.validate().map_err(|e| format!("hash: {e}"))?;
        }
        if self.encoder != EncoderKind::HashOnly {
            self.planes.validate().map_err(|e| format!("planes: {e}"))?;
        }
        self.background_hash.validate().map_err(|e| format!("background_hash: {e}"))?;
        if self.field.geo_dim == 0 {
            return Err("field.geo_dim must be positive".into());
        }
        Ok(())
    }
}

/// How far a reverse pass propagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardScope {
    /// Every parameter, encoder tables included.
    Full,
    /// MLPs and appearance rows; encoder tables are left alone.
    Heads,
    /// Only what the appearance adjoint needs: the color head without its
    /// hidden-layer weight gradients.
    Appearance,
}

/// Analytic parameter counts of a model, one term per component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub foreground_hash: usize,
    pub foreground_planes: usize,
    pub foreground_mlps: usize,
    pub background_hash: usize,
    pub background_mlps: usize,
    pub appearance: usize,
    /// `L * T * F` of the foreground grid.
    pub hash_bound: usize,
    /// Plane count with `N^2` instead of `(N+1)^2` vertices.
    pub planes_nominal: usize,
}

fn mlp_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn region_mlp_count(feat: usize, plane: usize, cfg: &FieldConfig) -> usize {
    let mut dw = vec![feat];
    dw.extend(&cfg.density_hidden);
    dw.push(1 + cfg.geo_dim);
    let plane = if cfg.color_uses_planes { plane } else { 0 };
    let mut cw = vec![cfg.geo_dim + plane + SH_DIM + cfg.appearance_dim];
    cw.extend(&cfg.color_hidden);
    cw.push(3);
    mlp_count(&dw) + mlp_count(&cw)
}

impl ParamBreakdown {
    pub fn foreground_encoder(&self) -> usize {
        self.foreground_hash + self.foreground_planes
    }

    pub fn total(&self) -> usize {
        self.foreground_encoder() + self.foreground_mlps + self.background_hash + self.background_mlps + self.appearance
    }

    pub fn to_text(&self) -> String {
        let rows = [
            ("foreground hash grid", self.foreground_hash),
            ("foreground planes", self.foreground_planes),
            ("foreground MLPs", self.foreground_mlps),
            ("background hash grid", self.background_hash),
            ("background MLPs", self.background_mlps),
            ("appearance rows", self.appearance),
        ];
        let mut s = String::new();
        for (name, n) in rows {
            s.push_str(&format!("  {name:<22} {n:>12}\n"));
        }
        s.push_str(&format!("  {:<22} {:>12}\n", "total", self.total()));
        s.push_str(&format!("  hash bound L*T*F {} ; planes with N^2 vertices {}\n", self.hash_bound, self.planes_nominal));
        s
    }
}

impl ModelConfig {
    pub fn param_breakdown(&self, appearance_rows: usize) -> ParamBreakdown {
        let hash = if self.encoder == EncoderKind::PlaneOnly { 0 } else { self.hash.param_count() };
        let planes = if self.encoder == EncoderKind::HashOnly { 0 } else { self.planes.param_count() };
        let fg_feat = match self.encoder {
            EncoderKind::Hybrid => self.hash.output_dim() + self.planes.output_dim(),
            EncoderKind::HashOnly => self.hash.output_dim(),
            EncoderKind::PlaneOnly => self.planes.output_dim(),
        };
        let fg_plane = if self.encoder == EncoderKind::HashOnly { 0 } else { self.planes.output_dim() };
        ParamBreakdown {
            foreground_hash: hash,
            foreground_planes: planes,
            foreground_mlps: region_mlp_count(fg_feat, fg_plane, &self.field),
            background_hash: self.background_hash.param_count(),
            background_mlps: region_mlp_count(self.background_hash.output_dim(), 0, &self.field),
            appearance: appearance_rows * self.field.appearance_dim,
            hash_bound: self.hash.param_bound(),
            planes_nominal: self.planes.nominal_param_count(),
        }
    }
}

#[inline]
pub fn region_slot(region: Region) -> usize {
    match region {
        Region::Foreground => 0,
        Region::Background => 1,
    }
}

/// Density and color heads over one encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionField<T> {
    pub encoder: Encoder<T>,
    pub density: Mlp<T>,
    pub color: Mlp<T>,
    pub geo_dim: usize,
    /// Plane-feature length forwarded to the color head.
    pub color_plane_dim: usize,
}

impl<T: Real> RegionField<T> {
    pub fn new<R: Rng + ?Sized>(encoder: Encoder<T>, cfg: &FieldConfig, rng: &mut R) -> Self {
        let feat = encoder.output_dim();
        let plane = if cfg.color_uses_planes { encoder.plane_dim() } else { 0 };
        let mut dw = vec![feat];
        dw.extend(&cfg.density_hidden);
        dw.push(1 + cfg.geo_dim);
        let mut cw = vec![cfg.geo_dim + plane + SH_DIM + cfg.appearance_dim];
        cw.extend(&cfg.color_hidden);
        cw.push(3);
        Self {
            encoder,
            density: Mlp::new(&dw, rng),
            color: Mlp::new(&cw, rng),
            geo_dim: cfg.geo_dim,
            color_plane_dim: plane,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            density: self.density.zeros_like(),
            color: self.color.zeros_like(),
            geo_dim: self.geo_dim,
            color_plane_dim: self.color_plane_dim,
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.geo_dim + self.color_plane_dim
    }

    fn stride(&self) -> usize {
        self.feat_dim() + self.density.acts_len() + self.head_dim() + self.color.acts_len()
    }

    pub fn appearance_dim(&self) -> usize {
        self.color.input_dim() - self.head_dim() - SH_DIM
    }
}

impl<T: Real> Parameters<T> for RegionField<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        let mut v = self.encoder.tensors(prefix);
        v.extend(self.density.tensors_as(&join(prefix, "density"), TensorClass::DensityWeight, TensorClass::DensityBias));
        v.extend(self.color.tensors_as(&join(prefix, "color"), TensorClass::ColorWeight, TensorClass::ColorBias));
        v
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut v = self.encoder.tensors_mut(prefix);
        v.extend(self.density.tensors_mut_as(&join(prefix, "density"), TensorClass::DensityWeight, TensorClass::DensityBias));
        v.extend(self.color.tensors_mut_as(&join(prefix, "color"), TensorClass::ColorWeight, TensorClass::ColorBias));
        v
    }
}

/// One trainable embedding row per training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceTable<T> {
    pub dim: usize,
    pub rows: Vec<T>,
}

impl<T: Real> AppearanceTable<T> {
    pub fn new<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Self {
        let rows = (0..count * dim).map(|_| T::lit(rng.gen_range(-1e-4..1e-4))).collect();
        Self { dim, rows }
    }

    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    pub fn row(&self, id: usize) -> &[T] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    /// Element-wise mean over all rows (zeros for an empty table).
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        let n = self.count();
        for id in 0..n {
            for (a, &v) in m.iter_mut().zip(self.row(id)) {
                *a += v;
            }
        }
        if n > 0 {
            let inv = T::lit(1.0 / n as f64);
            m.iter_mut().for_each(|v| *v *= inv);
        }
        m
    }
}

/// Which appearance embedding a ray uses.
#[derive(Clone, Copy, Debug)]
pub enum Appearance<'a, T> {
    /// A training image's row; gradients flow into the table.
    Image(usize),
    /// An explicit vector (evaluation); its adjoint is only reported.
    Vector(&'a [T]),
}

/// Foreground and background region fields plus the shared appearance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceField<T> {
    pub foreground: RegionField<T>,
    pub background: RegionField<T>,
    pub appearance: AppearanceTable<T>,
}

/// Per-ray state: direction/appearance inputs and their accumulated adjoint.
#[derive(Clone, Debug)]
pub struct RayContext<T> {
    pub tail: Vec<T>,
    pub app_id: Option<usize>,
    offsets: [Vec<T>; 2],
    d_pre0_sum: [Vec<T>; 2],
}

#[derive(Clone, Copy, Debug)]
pub struct SampleRecord<T> {
    pub region: Region,
    pub x: Vec3<T>,
    pub raw_sigma: T,
    pub sigma: T,
    pub color: [T; 3],
    offset: usize,
}

/// Activations of every sample evaluated along a ray.
#[derive(Clone, Debug, Default)]
pub struct RayTape<T> {
    pub samples: Vec<SampleRecord<T>>,
    bufs: [Vec<T>; 2],
}

impl<T: Real> RayTape<T> {
    pub fn clear(&mut self) {
        self.samples.clear();
        self.bufs[0].clear();
        self.bufs[1].clear();
    }
}

/// Reusable buffers for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct FieldScratch<T> {
    mlp: Vec<T>,
    d_pre0: Vec<T>,
    d_head: Vec<T>,
    d_dens_out: Vec<T>,
    pub d_feat: Vec<T>,
    d_tail: Vec<T>,
}

/// Result of a single-point forward pass.
#[derive(Clone, Debug)]
pub struct FieldTape<T> {
    ctx: RayContext<T>,
    tape: RayTape<T>,
}

/// Adjoints leaving the field heads.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldAdjoint<T> {
    pub d_feature: Vec<T>,
    pub d_appearance: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Real> RadianceField<T> {
    pub fn new(config: &ModelConfig, bounds: &SceneBounds<T>, appearance_rows: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut planes = config.planes.clone();
        if config.auto_vertical_scale {
            planes.vertical_scale = bounds.vertical_scale().as_f64();
        }
        let fg_encoder = Encoder::new(config.encoder, &config.hash, &planes, 1.0, &mut rng);
        let bg_radius = 1.0 + bounds.bg_size.as_f64();
        let bg_encoder = Encoder::new(EncoderKind::HashOnly, &config.background_hash, &planes, bg_radius, &mut rng);
        let foreground = RegionField::new(fg_encoder, &config.field, &mut rng);
        let background = RegionField::new(bg_encoder, &config.field, &mut rng);
        let appearance = AppearanceTable::new(appearance_rows, config.field.appearance_dim, &mut rng);
        Self { foreground, background, appearance }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            foreground: self.foreground.zeros_like(),
            background: self.background.zeros_like(),
            appearance: AppearanceTable { dim: self.appearance.dim, rows: vec![T::zero(); self.appearance.rows.len()] },
        }
    }

    pub fn region(&self, region: Region) -> &RegionField<T> {
        match region {
            Region::Foreground => &self.foreground,
            Region::Background => &self.background,
        }
    }

    fn region_mut(&mut self, region: Region) -> &mut RegionField<T> {
        match region {
            Region::Foreground => &mut self.foreground,
            Region::Background => &mut self.background,
        }
    }

    pub fn ray_context(&self, d: Vec3<T>, app: Appearance<'_, T>) -> Result<RayContext<T>, FieldError> {
        let n = d.norm().as_f64();
        if (n - 1.0).abs() > 1e-6 {
            return Err(FieldError::NonUnitDirection(n));
        }
        let a_dim = self.appearance.dim;
        let mut tail = Vec::with_capacity(SH_DIM + a_dim);
        tail.extend_from_slice(&sh_basis(d));
        let app_id = match app {
            Appearance::Image(id) => {
                if id >= self.appearance.count() {
                    return Err(FieldError::BadAppearance { id, count: self.appearance.count() });
                }
                tail.extend_from_slice(self.appearance.row(id));
                Some(id)
            }
            Appearance::Vector(v) => {
                if v.len() != a_dim {
                    return Err(FieldError::BadAppearanceDim { got: v.len(), expected: a_dim });
                }
                tail.extend_from_slice(v);
                None
            }
        };
        let mut offsets = [Vec::new(), Vec::new()];
        let mut sums = [Vec::new(), Vec::new()];
        for region in [Region::Foreground, Region::Background] {
            let f = self.region(region);
            let h = f.color.layers[0].outputs;
            let slot = region_slot(region);
            offsets[slot] = vec![T::zero(); h];
            f.color.first_layer_offset(f.head_dim(), &tail, &mut offsets[slot]);
            sums[slot] = vec![T::zero(); h];
        }
        Ok(RayContext { tail, app_id, offsets, d_pre0_sum: sums })
    }

    /// Evaluates one contracted point and records it on `tape`; returns the
    /// sample's index on the tape.
    pub fn eval_sample(&self, ctx: &RayContext<T>, region: Region, x: Vec3<T>, tape: &mut RayTape<T>) -> Result<usize, FieldError> {
        let f = self.region(region);
        let slot = region_slot(region);
        let buf = &mut tape.bufs[slot];
        let offset = buf.len();
        buf.resize(offset + f.stride(), T::zero());
        let rec = &mut buf[offset..];
        let (feat, rest) = rec.split_at_mut(f.feat_dim());
        let (dens, rest) = rest.split_at_mut(f.density.acts_len());
        let (head, color_acts) = rest.split_at_mut(f.head_dim());

        if let Err(e) = f.encoder.encode(x, feat) {
            buf.truncate(offset);
            return Err(e.into());
        }
        f.density.forward(feat, dens);
        let out = f.density.output(dens);
        let raw_sigma = out[0];
        head[..f.geo_dim].copy_from_slice(&out[1..]);
        if f.color_plane_dim > 0 {
            head[f.geo_dim..].copy_from_slice(&feat[f.feat_dim() - f.color_plane_dim..]);
        }
        f.color.forward_with_offset(head, &ctx.offsets[slot], color_acts);
        let c = f.color.output(color_acts);
        let color = [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])];
        let lim = T::lit(SIGMA_RAW_CLAMP);
        let sigma = raw_sigma.max(-lim).min(lim).exp();
        tape.samples.push(SampleRecord { region, x, raw_sigma, sigma, color, offset });
        Ok(tape.samples.len() - 1)
    }

    /// Reverse pass for one taped sample. MLP gradients go into `grads`;
    /// the first color-layer adjoint is summed into `ctx` until
    /// [`finish_ray`](Self::finish_ray). The encoder-feature adjoint is
    /// left in `scratch.d_feat` and, for [`BackwardScope::Full`], scattered
    /// into the encoder gradient tables.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_sample(
        &self,
        ctx: &mut RayContext<T>,
        tape: &RayTape<T>,
        index: usize,
        d_sigma: T,
        d_color: [T; 3],
        grads: &mut RadianceField<T>,
        scratch: &mut FieldScratch<T>,
        scope: BackwardScope,
    ) -> Result<(), FieldError> {
        let s = tape.samples.get(index).ok_or_else(|| FieldError::TapeMismatch(format!("no sample {index}")))?;
        let f = self.region(s.region);
        let slot = region_slot(s.region);
        let buf = &tape.bufs[slot];
        if s.offset + f.stride() > buf.len() {
            return Err(FieldError::TapeMismatch("record shorter than region stride".into()));
        }
        let rec = &buf[s.offset..s.offset + f.stride()];
        let (feat, rest) = rec.split_at(f.feat_dim());
        let (dens, rest) = rest.split_at(f.density.acts_len());
        let (head, color_acts) = rest.split_at(f.head_dim());
        let g = grads.region_mut(s.region);

        // color head
        let d_raw_c: [T; 3] = std::array::from_fn(|k| d_color[k] * s.color[k] * (T::one() - s.color[k]));
        let h0 = f.color.layers[0].outputs;
        scratch.d_pre0.resize(h0, T::zero());
        scratch.d_head.resize(f.head_dim(), T::zero());
        let heads = scope != BackwardScope::Appearance;
        f.color.backward(
            head,
            color_acts,
            &d_raw_c,
            heads.then_some(&mut g.color),
            &mut scratch.d_pre0,
            false,
            Some(&mut scratch.d_head),
            &mut scratch.mlp,
        );
        for (acc, &v) in ctx.d_pre0_sum[slot].iter_mut().zip(&scratch.d_pre0) {
            *acc += v;
        }
        if !heads {
            return Ok(());
        }

        // density head
        let lim = T::lit(SIGMA_RAW_CLAMP);
        let d_raw_sigma = if s.raw_sigma > -lim && s.raw_sigma < lim { d_sigma * s.sigma } else { T::zero() };
        scratch.d_dens_out.clear();
        scratch.d_dens_out.push(d_raw_sigma);
        scratch.d_dens_out.extend_from_slice(&scratch.d_head[..f.geo_dim]);
        scratch.d_feat.resize(f.feat_dim(), T::zero());
        let hd = f.density.layers[0].outputs;
        scratch.d_pre0.resize(hd, T::zero());
        f.density.backward(
            feat,
            dens,
            &scratch.d_dens_out,
            Some(&mut g.density),
            &mut scratch.d_pre0,
            true,
            Some(&mut scratch.d_feat),
            &mut scratch.mlp,
        );
        if f.color_plane_dim > 0 {
            let start = f.feat_dim() - f.color_plane_dim;
            for (a, &b) in scratch.d_feat[start..].iter_mut().zip(&scratch.d_head[f.geo_dim..]) {
                *a += b;
            }
        }
        if scope == BackwardScope::Full {
            f.encoder.backward(s.x, &scratch.d_feat, &mut g.encoder)?;
        }
        Ok(())
    }

    /// Folds the per-ray color-layer adjoint into the offset columns and the
    /// appearance row; returns the appearance adjoint.
    pub fn finish_ray(&self, ctx: &mut RayContext<T>, grads: &mut RadianceField<T>, scratch: &mut FieldScratch<T>) -> Vec<T> {
        let a_dim = self.appearance.dim;
        let mut d_app = vec![T::zero(); a_dim];
        for region in [Region::Foreground, Region::Background] {
            let slot = region_slot(region);
            if ctx.d_pre0_sum[slot].iter().all(|&v| v == T::zero()) {
                continue;
            }
            let f = self.region(region);
            scratch.d_tail.resize(ctx.tail.len(), T::zero());
            f.color.backward_offset(
                f.head_dim(),
                &ctx.tail,
                &ctx.d_pre0_sum[slot],
                &mut grads.region_mut(region).color,
                &mut scratch.d_tail,
            );
            for (a, &v) in d_app.iter_mut().zip(&scratch.d_tail[SH_DIM..]) {
                *a += v;
            }
            ctx.d_pre0_sum[slot].fill(T::zero());
        }
        if let Some(id) = ctx.app_id {
            for (g, &v) in grads.appearance.rows[id * a_dim..(id + 1) * a_dim].iter_mut().zip(&d_app) {
                *g += v;
            }
        }
        d_app
    }

    /// Single-point query: `(sigma, rgb, tape)`.
    pub fn field_forward(
        &self,
        x: Vec3<T>,
        d: Vec3<T>,
        app: Appearance<'_, T>,
        region: Region,
    ) -> Result<(T, [T; 3], FieldTape<T>), FieldError> {
        let ctx = self.ray_context(d, app)?;
        let mut tape = RayTape::default();
        self.eval_sample(&ctx, region, x, &mut tape)?;
        let s = tape.samples[0];
        Ok((s.sigma, s.color, FieldTape { ctx, tape }))
    }

    /// Reverse pass of [`field_forward`](Self::field_forward). Accumulates
    /// MLP and appearance gradients into `grads` and returns the adjoint of
    /// the encoder feature; encoder tables are not touched.
    pub fn field_backward(
        &self,
        tape: &FieldTape<T>,
        d_sigma: T,
        d_color: [T; 3],
        grads: &mut RadianceField<T>,
    ) -> Result<FieldAdjoint<T>, FieldError> {
        if tape.tape.samples.len() != 1 {
            return Err(FieldError::TapeMismatch("expected a single-sample tape".into()));
        }
        let region = tape.tape.samples[0].region;
        if tape.ctx.offsets[region_slot(region)].len() != self.region(region).color.layers[0].outputs {
            return Err(FieldError::TapeMismatch("color width differs".into()));
        }
        let mut ctx = tape.ctx.clone();
        let mut scratch = FieldScratch::default();
        self.backward_sample(&mut ctx, &tape.tape, 0, d_sigma, d_color, grads, &mut scratch, BackwardScope::Heads)?;
        let d_appearance = self.finish_ray(&mut ctx, grads, &mut scratch);
        Ok(FieldAdjoint { d_feature: scratch.d_feat, d_appearance })
    }
}

impl<T: Real> Parameters<T> for RadianceField<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        let mut v = self.foreground.tensors(&join(prefix, "fg"));
        v.extend(self.background.tensors(&join(prefix, "bg")));
        v.push(Tensor { name: join(prefix, "appearance"), class: TensorClass::Appearance, data: &self.appearance.rows });
        v
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        let mut v = self.foreground.tensors_mut(&join(prefix, "fg"));
        v.extend(self.background.tensors_mut(&join(prefix, "bg")));
        v.push(TensorMut { name: join(prefix, "appearance"), class: TensorClass::Appearance, data: &mut self.appearance.rows });
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::zero_all;

    fn micro() -> ModelConfig {
        ModelConfig {
            encoder: EncoderKind::Hybrid,
            hash: HashGridConfig { levels: 2, table_size: 1 << 7, feat_dim: 2, res_min: 4, res_max: 8 },
            planes: PlaneSetConfig { resolutions: vec![8, 16], feat_dim: 2, vertical_scale: 1.0 },
            background_hash: HashGridConfig { levels: 2, table_size: 1 << 7, feat_dim: 2, res_min: 4, res_max: 8 },
            field: FieldConfig { density_hidden: vec![8], color_hidden: vec![8, 8], geo_dim: 15, appearance_dim: 4, color_uses_planes: true },
            auto_vertical_scale: false,
        }
    }

    fn field() -> RadianceField<f64> {
        RadianceField::new(&micro(), &SceneBounds::new(Vec3::zero(), 1.0), 3, 9)
    }

    #[test]
    fn breakdown_matches_instantiated_model() {
        for kind in [EncoderKind::Hybrid, EncoderKind::HashOnly, EncoderKind::PlaneOnly] {
            let cfg = ModelConfig { encoder: kind, ..micro() };
            let f = RadianceField::<f64>::new(&cfg, &SceneBounds::new(Vec3::zero(), 1.0), 3, 9);
            assert_eq!(cfg.param_breakdown(3).total(), f.param_count(), "{kind:?}");
        }
    }

    #[test]
    fn zero_parameters_give_mid_grey() {
        let mut f = field();
        zero_all(&mut f);
        let (sigma, c, _) = f.field_forward(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 1.0), Appearance::Image(1), Region::Foreground).unwrap();
        assert_eq!(sigma, 1.0);
        assert_eq!(c, [0.5; 3]);
    }

    #[test]
    fn forward_is_deterministic_and_in_range() {
        let f = field();
        let d = Vec3::new(0.6, 0.0, 0.8);
        let x = Vec3::new(1.2, -0.4, 0.3);
        let a = f.field_forward(x, d, Appearance::Image(0), Region::Background).unwrap();
        let b = f.field_forward(x, d, Appearance::Image(0), Region::Background).unwrap();
        assert_eq!((a.0, a.1), (b.0, b.1));
        assert!(a.0 >= 0.0 && a.1.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = field();
        let x = Vec3::zero();
        assert!(matches!(
            f.field_forward(x, Vec3::new(1.0, 1.0, 0.0), Appearance::Image(0), Region::Foreground),
            Err(FieldError::NonUnitDirection(_))
        ));
        assert!(matches!(
            f.field_forward(x, Vec3::new(1.0, 0.0, 0.0), Appearance::Image(7), Region::Foreground),
            Err(FieldError::BadAppearance { .. })
        ));
        // foreground encoder only covers the unit ball
        assert!(matches!(
            f.field_forward(Vec3::new(1.5, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Appearance::Image(0), Region::Foreground),
            Err(FieldError::Encode(_))
        ));
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let f = field();
        let (_, _, tape) = f.field_forward(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 1.0, 0.0), Appearance::Image(2), Region::Foreground).unwrap();
        let mut g = f.zeros_like();
        let adj = f.field_backward(&tape, 0.0, [0.0; 3], &mut g).unwrap();
        assert!(adj.d_feature.iter().all(|&v| v == 0.0));
        assert!(g.tensors("").iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn appearance_gradient_only_on_used_row() {
        let f = field();
        let (_, _, tape) = f.field_forward(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 1.0, 0.0), Appearance::Image(2), Region::Foreground).unwrap();
        let mut g = f.zeros_like();
        f.field_backward(&tape, 0.3, [0.2, -0.1, 0.5], &mut g).unwrap();
        let a = f.appearance.dim;
        assert!(g.appearance.rows[..2 * a].iter().all(|&v| v == 0.0));
        assert!(g.appearance.rows[2 * a..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mean_appearance() {
        let t = AppearanceTable::<f64> { dim: 2, rows: vec![1.0, 2.0, 3.0, 6.0] };
        assert_eq!(t.mean(), vec![2.0, 4.0]);
        assert_eq!(t.count(), 2);
    }
}
