//! Central finite-difference checks of every hand-written adjoint.
//!
//! Each suite builds a scalar loss, computes its analytic gradient with the
//! reverse passes used in training, and compares every trainable entry
//! against `(L(p + h) - L(p - h)) / 2h` at 64-bit precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoding::Encoder;
use crate::field::{Appearance, BackwardScope, ModelConfig, RadianceField};
use crate::geometry::{Ray, Region, SceneBounds};
use crate::optim::ray_sq_error;
use crate::params::{Parameters, TensorClass};
use crate::render::{composite, composite_backward, render_backward, render_forward, RayPlan, RayWorkspace, RenderConfig};
use crate::vec3::Vec3;

/// Maximum relative error per component suite.
pub const SUITE_TOLERANCES: [(&str, f64); 3] = [("encoding", 1e-5), ("field", 1e-4), ("render", 1e-6)];

fn suite_tolerance(suite: &str, pipeline: f64) -> f64 {
    SUITE_TOLERANCES.iter().find(|(s, _)| *s == suite).map_or(pipeline, |&(_, t)| t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    /// Finite-difference half step.
    pub step: f64,
    /// Tolerance of the full-pipeline suite; the component suites use the
    /// tighter fixed bounds in [`SUITE_TOLERANCES`].
    pub tolerance: f64,
    /// Relative errors use `max(|analytic|, |numeric|, abs_floor)` as the
    /// denominator so that vanishing gradients compare absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { step: 1e-6, tolerance: 1e-3, abs_floor: 1e-6, seed: 0 }
    }
}

/// Test hook: scales the analytic gradient of every tensor whose name
/// contains `tensor`, simulating a broken adjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultInjection {
    pub tensor: String,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorReport {
    pub suite: String,
    pub name: String,
    pub class: Option<TensorClass>,
    pub entries: usize,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorReport>,
}

impl TensorReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(TensorReport::passed)
    }

    pub fn worst(&self) -> Option<&TensorReport> {
        self.tensors.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn failures(&self) -> Vec<&TensorReport> {
        self.tensors.iter().filter(|t| !t.passed()).collect()
    }

    /// Worst error per trainable tensor class, over all suites.
    pub fn class_summary(&self) -> BTreeMap<TensorClass, (usize, f64)> {
        let mut m = BTreeMap::new();
        for t in &self.tensors {
            if let Some(c) = t.class {
                let e = m.entry(c).or_insert((0usize, 0.0f64));
                e.0 += t.entries;
                e.1 = e.1.max(t.max_rel_err);
            }
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:<28} {:>7} {:>11} {:>9}  status", "suite", "tensor", "entries", "max rel err", "bound");
        for t in &self.tensors {
            let ok = if t.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<10} {:<28} {:>7} {:>11.3e} {:>9.0e}  {ok}",
                t.suite, t.name, t.entries, t.max_rel_err, t.tolerance
            );
        }
        let _ = writeln!(s, "\nper tensor class:");
        for (c, (n, e)) in self.class_summary() {
            let _ = writeln!(s, "  {:<22} {:>7} entries  max rel err {:.3e}", c.label(), n, e);
        }
        if let Some(w) = self.worst() {
            let _ = writeln!(
                s,
                "\nworst: {} / {} [{}] analytic {:.6e} numeric {:.6e} rel err {:.3e} (bound {:.0e})",
                w.suite, w.name, w.worst_index, w.analytic, w.numeric, w.max_rel_err, w.tolerance
            );
        }
        s
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic tensors `analytic` (same order as `params`)
/// against finite differences of `loss` over every entry of `params`.
fn check_tensors<P: Parameters<f64>>(
    suite: &str,
    params: &mut P,
    analytic: &P,
    cfg: &GradcheckConfig,
    fault: Option<&FaultInjection>,
    keep: impl Fn(TensorClass) -> bool,
    mut loss: impl FnMut(&P) -> f64,
) -> Vec<TensorReport> {
    let analytic: Vec<(String, TensorClass, Vec<f64>)> =
        analytic.tensors("").into_iter().map(|t| (t.name, t.class, t.data.to_vec())).collect();
    let mut out = Vec::new();
    for (ti, (name, class, grad)) in analytic.into_iter().enumerate() {
        if !keep(class) {
            continue;
        }
        let factor = fault.filter(|f| name.contains(&f.tensor)).map_or(1.0, |f| f.factor);
        let mut rep = TensorReport {
            suite: suite.into(),
            name: name.clone(),
            class: Some(class),
            entries: grad.len(),
            tolerance: suite_tolerance(suite, cfg.tolerance),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (j, &g) in grad.iter().enumerate() {
            let orig = params.tensors("")[ti].data[j];
            params.tensors_mut("")[ti].data[j] = orig + cfg.step;
            let up = loss(params);
            params.tensors_mut("")[ti].data[j] = orig - cfg.step;
            let down = loss(params);
            params.tensors_mut("")[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = g * factor;
            let e = rel_err(a, numeric, cfg.abs_floor);
            if e > rep.max_rel_err || j == 0 {
                rep.max_rel_err = rep.max_rel_err.max(e);
                rep.worst_index = j;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
        out.push(rep);
    }
    out
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.2 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Encoder tables: loss `sum_j r_j * enc(x)_j` over a few points.
fn encoding_suite(field: &RadianceField<f64>, cfg: &GradcheckConfig, fault: Option<&FaultInjection>) -> Vec<TensorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE1);
    let mut enc = field.foreground.encoder.clone();
    let dim = enc.output_dim();
    let points: Vec<Vec3<f64>> = (0..4).map(|_| random_dir(&mut rng) * rng.gen_range(0.0..0.95)).collect();
    let weights: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut grads = enc.zeros_like();
    for (x, r) in points.iter().zip(&weights) {
        enc.backward(*x, r, &mut grads).expect("points lie in the domain");
    }
    let loss = |e: &Encoder<f64>| -> f64 {
        points
            .iter()
            .zip(&weights)
            .map(|(x, r)| e.encode_vec(*x).expect("in domain").iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    check_tensors("encoding", &mut enc, &grads, cfg, fault, |_| true, loss)
}

/// Field heads: loss `a * sigma + b . rgb` at points in both regions.
fn field_suite(
    field: &RadianceField<f64>,
    bounds: &SceneBounds<f64>,
    cfg: &GradcheckConfig,
    fault: Option<&FaultInjection>,
) -> Vec<TensorReport> {
    let outer = 1.0 + 0.95 * bounds.bg_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xF1);
    let rows = field.appearance.count();
    let queries: Vec<(Vec3<f64>, Vec3<f64>, usize, Region, f64, [f64; 3])> = (0..4)
        .map(|k| {
            let region = if k % 2 == 0 { Region::Foreground } else { Region::Background };
            let r = if region == Region::Foreground { rng.gen_range(0.0..0.95) } else { rng.gen_range(1.05..outer) };
            let x = random_dir(&mut rng) * r;
            let d = random_dir(&mut rng);
            let a = rng.gen_range(-1.0..1.0);
            let b = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            (x, d, k % rows.max(1), region, a, b)
        })
        .collect();
    let mut grads = field.zeros_like();
    for &(x, d, id, region, a, b) in &queries {
        let (_, _, tape) = field.field_forward(x, d, Appearance::Image(id), region).expect("valid query");
        field.field_backward(&tape, a, b, &mut grads).expect("matching tape");
    }
    let loss = |f: &RadianceField<f64>| -> f64 {
        queries
            .iter()
            .map(|&(x, d, id, region, a, b)| {
                let (s, c, _) = f.field_forward(x, d, Appearance::Image(id), region).expect("valid query");
                a * s + b[0] * c[0] + b[1] * c[1] + b[2] * c[2]
            })
            .sum()
    };
    // field_backward stops at the encoder feature, so tables are skipped
    let mut params = field.clone();
    let heads = |c| !matches!(c, TensorClass::HashTable | TensorClass::PlaneTable);
    check_tensors("field", &mut params, &grads, cfg, fault, heads, loss)
}

/// Compositing adjoint with respect to per-sample density and color.
fn render_suite(cfg: &GradcheckConfig) -> Vec<TensorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1);
    let n = 8;
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    let color: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
    let bg = [0.2, 0.3, 0.4];
    let g = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let (ds, dc) = composite_backward(&sigma, &color, &delta, bg, g).expect("matching lengths");
    let eval = |s: &[f64], c: &[[f64; 3]]| {
        let r = composite(s, c, &delta, bg).expect("matching lengths").rgb;
        r[0] * g[0] + r[1] * g[1] + r[2] * g[2]
    };
    let mut sig_rep = TensorReport {
        suite: "render".into(),
        name: "sigma".into(),
        class: None,
        entries: n,
        tolerance: suite_tolerance("render", cfg.tolerance),
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut col_rep = TensorReport { name: "color".into(), entries: 3 * n, ..sig_rep.clone() };
    let note = |rep: &mut TensorReport, j: usize, a: f64, num: f64| {
        let e = rel_err(a, num, cfg.abs_floor);
        if e >= rep.max_rel_err {
            *rep = TensorReport { max_rel_err: e, worst_index: j, analytic: a, numeric: num, ..rep.clone() };
        }
    };
    for i in 0..n {
        let (mut up, mut dn) = (sigma.clone(), sigma.clone());
        up[i] += cfg.step;
        dn[i] -= cfg.step;
        note(&mut sig_rep, i, ds[i], (eval(&up, &color) - eval(&dn, &color)) / (2.0 * cfg.step));
        for k in 0..3 {
            let (mut up, mut dn) = (color.clone(), color.clone());
            up[i][k] += cfg.step;
            dn[i][k] -= cfg.step;
            note(&mut col_rep, 3 * i + k, dc[i][k], (eval(&sigma, &up) - eval(&sigma, &dn)) / (2.0 * cfg.step));
        }
    }
    vec![sig_rep, col_rep]
}

/// The ray used by the full-pipeline suite: enters the foreground ball and
/// continues into the background.
pub fn probe_ray(bounds: &SceneBounds<f64>) -> Ray<f64> {
    let origin = bounds.center + Vec3::new(-0.6, 0.25, 0.1) * bounds.radius;
    let dir = Vec3::new(1.0, -0.3, 0.15).normalized();
    Ray::new(origin, dir, 0.0, bounds.t_far()).expect("valid probe ray")
}

/// One ray through sampling, both passes, compositing and the loss, with
/// sample placement frozen.
fn pipeline_suite(
    field: &RadianceField<f64>,
    bounds: &SceneBounds<f64>,
    render: &RenderConfig,
    cfg: &GradcheckConfig,
    fault: Option<&FaultInjection>,
) -> Vec<TensorReport> {
    let ray = probe_ray(bounds);
    let gt = [0.8, 0.3, 0.55];
    let id = field.appearance.count().saturating_sub(1);
    let half = if render.fine { 0.5 } else { 1.0 };
    let mut ws = RayWorkspace::default();
    let out = render_forward::<f64, ChaCha8Rng>(field, &ray, bounds, Appearance::Image(id), render, None, None, &mut ws)
        .expect("probe ray renders");
    let plan: RayPlan<f64> = out.plan.clone();
    let (_, dc) = ray_sq_error(out.coarse_rgb, gt, half);
    let (_, df) = ray_sq_error(out.rgb, gt, half);
    let mut grads = field.zeros_like();
    render_backward(field, &mut ws, dc, df, &mut grads, BackwardScope::Full).expect("backward");
    let loss = |f: &RadianceField<f64>| -> f64 {
        let mut ws = RayWorkspace::default();
        let o = render_forward::<f64, ChaCha8Rng>(f, &ray, bounds, Appearance::Image(id), render, Some(&plan), None, &mut ws)
            .expect("probe ray renders");
        let (ec, _) = ray_sq_error(o.coarse_rgb, gt, half);
        let (ef, _) = if render.fine { ray_sq_error(o.rgb, gt, half) } else { (0.0, [0.0; 3]) };
        ec + ef
    };
    let mut params = field.clone();
    check_tensors("pipeline", &mut params, &grads, cfg, fault, |_| true, loss)
}

/// Redraws tables, appearance rows and biases at unit scale. The training
/// initialisation keeps features near 1e-4, which puts ReLU pre-activations
/// within one finite-difference step of their kink.
pub fn spread_parameters(field: &mut RadianceField<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for t in field.tensors_mut("") {
        let scale = match t.class {
            TensorClass::HashTable | TensorClass::PlaneTable | TensorClass::Appearance => 0.5,
            TensorClass::DensityBias | TensorClass::ColorBias => 0.1,
            TensorClass::DensityWeight | TensorClass::ColorWeight => continue,
        };
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Runs every suite on a model built from `model` at `f64`.
pub fn run_gradcheck(
    model: &ModelConfig,
    bounds: &SceneBounds<f64>,
    render: &RenderConfig,
    appearance_rows: usize,
    cfg: &GradcheckConfig,
    fault: Option<&FaultInjection>,
) -> GradcheckReport {
    let mut field = RadianceField::<f64>::new(model, bounds, appearance_rows.max(1), cfg.seed);
    spread_parameters(&mut field, cfg.seed);
    let mut tensors = encoding_suite(&field, cfg, fault);
    tensors.extend(field_suite(&field, bounds, cfg, fault));
    tensors.extend(render_suite(cfg));
    tensors.extend(pipeline_suite(&field, bounds, render, cfg, fault));
    GradcheckReport { tensors }
}

/// The smallest model that still exercises every tensor class.
pub fn micro_model() -> ModelConfig {
    use crate::encoding::{EncoderKind, HashGridConfig, PlaneSetConfig};
    use crate::field::FieldConfig;
    let hash = HashGridConfig { levels: 2, table_size: 1 << 7, feat_dim: 2, res_min: 4, res_max: 8 };
    ModelConfig {
        encoder: EncoderKind::Hybrid,
        hash: hash.clone(),
        planes: PlaneSetConfig { resolutions: vec![8, 16], feat_dim: 2, vertical_scale: 1.0 },
        background_hash: hash,
        field: FieldConfig { density_hidden: vec![8], color_hidden: vec![8, 8], geo_dim: 15, appearance_dim: 4, color_uses_planes: true },
        auto_vertical_scale: false,
    }
}

/// Sample counts used with [`micro_model`].
pub fn micro_render() -> RenderConfig {
    RenderConfig { n_foreground: 4, n_background: 2, fine: true, background: [0.1, 0.2, 0.3] }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(fault: Option<&FaultInjection>) -> GradcheckReport {
        let bounds = SceneBounds::new(Vec3::new(0.0, 0.0, 0.5), 1.0);
        run_gradcheck(&micro_model(), &bounds, &micro_render(), 3, &GradcheckConfig::default(), fault)
    }

    #[test]
    fn micro_model_passes_and_covers_every_class() {
        let rep = run(None);
        assert!(rep.passed(), "{}", rep.to_text());
        let classes = rep.class_summary();
        for c in TensorClass::ALL {
            assert!(classes.contains_key(&c), "missing {c:?}");
        }
        assert!(rep.tensors.iter().any(|t| t.suite == "render"));
    }

    #[test]
    fn appearance_scope_matches_finite_differences() {
        let bounds = SceneBounds::new(Vec3::new(0.0, 0.0, 0.5), 1.0);
        let mut field = RadianceField::<f64>::new(&micro_model(), &bounds, 3, 4);
        spread_parameters(&mut field, 4);
        let cfg = micro_render();
        let ray = probe_ray(&bounds);
        let gt = [0.3, 0.6, 0.2];
        let loss_grad = |v: &[f64], scope: BackwardScope| {
            let mut ws = RayWorkspace::default();
            let o = render_forward::<f64, ChaCha8Rng>(&field, &ray, &bounds, Appearance::Vector(v), &cfg, None, None, &mut ws).unwrap();
            let (ec, dc) = ray_sq_error(o.coarse_rgb, gt, 0.5);
            let (ef, df) = ray_sq_error(o.rgb, gt, 0.5);
            let mut g = field.zeros_like();
            (ec + ef, render_backward(&field, &mut ws, dc, df, &mut g, scope).unwrap())
        };
        let v = vec![0.2, -0.4, 0.1, 0.3];
        let (_, cheap) = loss_grad(&v, BackwardScope::Appearance);
        let (_, full) = loss_grad(&v, BackwardScope::Full);
        for k in 0..v.len() {
            assert!((cheap[k] - full[k]).abs() < 1e-14);
            let mut up = v.clone();
            up[k] += 1e-6;
            let mut dn = v.clone();
            dn[k] -= 1e-6;
            let num = (loss_grad(&up, BackwardScope::Appearance).0 - loss_grad(&dn, BackwardScope::Appearance).0) / 2e-6;
            assert!(rel_err(cheap[k], num, 1e-6) < 1e-5, "{k}: {} vs {num}", cheap[k]);
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let fault = FaultInjection { tensor: "fg.color.layer1.weight".into(), factor: 1.01 };
        let rep = run(Some(&fault));
        assert!(!rep.passed());
        assert!(rep.failures().iter().all(|t| t.name.contains("color.layer1.weight")), "{}", rep.to_text());
    }
}
