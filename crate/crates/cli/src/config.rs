//! Run configuration: presets, TOML files and flag overrides.
//!
//! Precedence, lowest first: the preset, the config file, the
//! `HFIELD_OUTPUT` environment variable (output root only), command-line
//! flags. The fully resolved config is written next to every run.

use std::path::{Path, PathBuf};

use hybrid_field::data::{Split, SyntheticSceneSpec};
use hybrid_field::encoding::{HashGridConfig, PlaneSetConfig};
use hybrid_field::eval::AppearanceProtocol;
use hybrid_field::field::FieldConfig;
use hybrid_field::gradcheck::{micro_model, micro_render};
use hybrid_field::optim::TrainConfig;
use hybrid_field::{ModelConfig, RenderConfig};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ENV: &str = "HFIELD_OUTPUT";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Scene spec used by every preset unless a dataset is given.
pub const DESK_SMALL_SCENE: &str = include_str!("../assets/desk_small.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperDefault,
    DeskSmall,
    MicroGradcheck,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper-default" => Ok(Self::PaperDefault),
            "desk-small" => Ok(Self::DeskSmall),
            "micro-gradcheck" => Ok(Self::MicroGradcheck),
            other => Err(format!("unknown preset '{other}' (paper-default, desk-small, micro-gradcheck)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown precision '{other}' (f32, f64)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split: Split,
    pub appearance: AppearanceProtocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    /// Root seed: model initialisation and every training draw.
    pub seed: u64,
    pub output: PathBuf,
    pub precision: Precision,
    /// Existing dataset directory; when absent the `scene` spec is rendered
    /// into `<output>/dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub scene: SyntheticSceneSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn desk_scene() -> SyntheticSceneSpec {
    SyntheticSceneSpec::from_toml(DESK_SMALL_SCENE).expect("bundled scene spec parses")
}

fn desk_grid() -> HashGridConfig {
    HashGridConfig { levels: 8, table_size: 1 << 14, feat_dim: 2, res_min: 16, res_max: 256 }
}

pub fn preset(p: Preset) -> RunConfig {
    let eval = EvalConfig { split: Split::Test, appearance: AppearanceProtocol::Mean };
    let base = RunConfig {
        preset: p,
        seed: 0,
        output: PathBuf::from("runs").join(preset_name(p)),
        precision: Precision::F32,
        dataset: None,
        scene: desk_scene(),
        model: ModelConfig::default(),
        train: TrainConfig::default(),
        eval,
    };
    match p {
        Preset::PaperDefault => base,
        Preset::DeskSmall => RunConfig {
            model: ModelConfig {
                hash: desk_grid(),
                planes: PlaneSetConfig { resolutions: vec![32, 64, 128], feat_dim: 2, vertical_scale: 1.0 },
                background_hash: desk_grid(),
                field: FieldConfig {
                    density_hidden: vec![32],
                    color_hidden: vec![32, 32],
                    geo_dim: 15,
                    appearance_dim: 16,
                    color_uses_planes: true,
                },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                iterations: 3000,
                batch_rays: 128,
                learning_rate: 1e-2,
                render: RenderConfig { n_foreground: 32, n_background: 16, fine: true, background: [0.0; 3] },
                ..TrainConfig::default()
            },
            ..base
        },
        Preset::MicroGradcheck => {
            let mut scene = desk_scene();
            scene.width = 24;
            scene.height = 24;
            scene.cameras.count = 8;
            RunConfig {
                precision: Precision::F64,
                scene,
                model: micro_model(),
                train: TrainConfig { iterations: 10, batch_rays: 32, learning_rate: 1e-2, render: micro_render(), ..TrainConfig::default() },
                ..base
            }
        }
    }
}

pub fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::PaperDefault => "paper-default",
        Preset::DeskSmall => "desk-small",
        Preset::MicroGradcheck => "micro-gradcheck",
    }
}

/// Command-line values that take precedence over presets and files.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub output: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub iterations: Option<usize>,
    pub batch_rays: Option<usize>,
    pub learning_rate: Option<f64>,
    pub encoder: Option<hybrid_field::encoding::EncoderKind>,
    pub precision: Option<Precision>,
    pub hash_table_size: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

fn merge(base: &mut toml::Value, over: toml::Value, path: &str) -> Result<(), String> {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None if OPTIONAL_KEYS.contains(&here.as_str()) => {
                        b.insert(k, v);
                    }
                    None => return Err(format!("unknown config key '{here}'")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Keys that a preset may leave unset.
const OPTIONAL_KEYS: [&str; 2] = ["dataset", "scene.ground"];

impl RunConfig {
    /// Preset, then `file`, then the output env var, then `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, String> {
        let user: Option<toml::Value> = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Some(toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
            }
            None => None,
        };
        let file_preset = user
            .as_ref()
            .and_then(|u| u.get("preset"))
            .map(|v| v.as_str().ok_or("preset must be a string")?.parse::<Preset>())
            .transpose()?;
        let chosen = flags.preset.or(file_preset).unwrap_or(Preset::DeskSmall);
        let mut cfg = preset(chosen);
        if let Some(mut u) = user {
            if let Some(t) = u.as_table_mut() {
                t.remove("preset");
            }
            let mut value = toml::Value::try_from(&cfg).map_err(|e| e.to_string())?;
            merge(&mut value, u, "")?;
            cfg = value.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        }
        if let Ok(out) = std::env::var(OUTPUT_ENV) {
            if !out.is_empty() {
                cfg.output = PathBuf::from(out);
            }
        }
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(v) = &f.output {
            self.output = v.clone();
        }
        if let Some(v) = &f.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = f.threads {
            self.train.threads = v;
        }
        if let Some(v) = f.iterations {
            self.train.iterations = v;
        }
        if let Some(v) = f.batch_rays {
            self.train.batch_rays = v;
        }
        if let Some(v) = f.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = f.encoder {
            self.model.encoder = v;
        }
        if let Some(v) = f.precision {
            self.precision = v;
        }
        if let Some(v) = f.hash_table_size {
            self.model.hash.table_size = v;
        }
        if let Some(v) = f.checkpoint_every {
            self.train.checkpoint_every = v;
        }
        self.train.seed = self.seed;
    }

    /// Every check that can fail before any compute starts.
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if let Err(e) = self.model.validate() {
            errs.push(format!("model: {e}"));
        }
        if let Err(e) = self.train.validate() {
            errs.push(format!("train: {e}"));
        }
        if self.train.threads == 0 {
            errs.push("train: threads must be at least 1".into());
        }
        if self.dataset.is_none() {
            if let Err(e) = self.scene.validate() {
                errs.push(format!("scene: {e}"));
            }
        } else if let Some(d) = &self.dataset {
            if !d.join(hybrid_field::data::MANIFEST_FILE).is_file() {
                errs.push(format!("dataset: no manifest in {}", d.display()));
            }
        }
        if let AppearanceProtocol::OptimizeLeftHalf { iterations, batch_rays, learning_rate } = self.eval.appearance {
            if iterations == 0 || batch_rays == 0 || !(learning_rate > 0.0) {
                errs.push("eval: appearance fitting needs positive iterations, batch_rays and learning_rate".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("\n"))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}
