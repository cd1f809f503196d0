//! Flat `key = value` run configuration.
//!
//! Commands read their knobs out of a [`Settings`] map that merges three
//! layers: built-in defaults, an optional config file, and command-line
//! flags (strongest). Every key must be consumed by the command; leftovers
//! are treated as typos and rejected so a misspelled knob can never
//! silently fall back to a default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use voxdn_core::models::{GeneratorConfig, GeneratorVariant};
use voxdn_core::trainer::{CheckpointMeta, PretrainLoss};
use voxdn_core::CoreError;

pub struct Settings {
    entries: BTreeMap<String, String>,
}

impl Settings {
    pub fn empty() -> Self {
        Settings { entries: BTreeMap::new() }
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, duplicate keys are an error.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut entries = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CoreError::config(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    ln + 1
                )));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(CoreError::config(format!("config line {}: empty key", ln + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CoreError::config(format!(
                    "config line {}: duplicate key {key:?}",
                    ln + 1
                )));
            }
        }
        Ok(Settings { entries })
    }

    pub fn read(path: &Path) -> Result<Self, CoreError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CoreError::format(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CoreError> {
        match path {
            Some(p) => Self::read(p),
            None => Ok(Self::empty()),
        }
    }

    /// Command-line override: replaces whatever the file said.
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Preset layer: fills a key only when neither file nor flag set it.
    pub fn set_default(&mut self, key: &str, value: impl Display) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, CoreError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CoreError::config(format!("config key {key}: cannot parse {raw:?}: {e}"))
            }),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T, CoreError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Must be called after every knob is consumed; any survivor is a typo.
    pub fn finish(self) -> Result<(), CoreError> {
        if let Some(key) = self.entries.keys().next() {
            return Err(CoreError::config(format!("unknown config key {key:?}")));
        }
        Ok(())
    }
}

/// `ZxYxX`, e.g. `32x96x96`.
pub fn parse_dims(s: &str) -> Result<[usize; 3], CoreError> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(CoreError::config(format!("dims must look like 32x96x96, got {s:?}")));
    }
    let mut dims = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        dims[i] = p
            .trim()
            .parse()
            .map_err(|e| CoreError::config(format!("dims component {p:?}: {e}")))?;
        if dims[i] == 0 {
            return Err(CoreError::config(format!("dims must be positive, got {s:?}")));
        }
    }
    Ok(dims)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipChoice {
    Default,
    Full,
    None,
}

impl SkipChoice {
    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s {
            "default" => Ok(SkipChoice::Default),
            "full" => Ok(SkipChoice::Full),
            "none" => Ok(SkipChoice::None),
            other => Err(CoreError::config(format!(
                "skips must be default, full or none, got {other:?}"
            ))),
        }
    }
}

impl FromStr for SkipChoice {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, CoreError> {
        SkipChoice::parse(s)
    }
}

/// Architecture selection, all optional so a checkpoint can fill the gaps.
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub variant: Option<GeneratorVariant>,
    pub channels: Option<usize>,
    pub skips: Option<SkipChoice>,
}

impl ModelSettings {
    fn from_settings(s: &mut Settings) -> Result<Self, CoreError> {
        let variant = match s.take::<String>("variant")? {
            Some(v) => Some(GeneratorVariant::parse(&v)?),
            None => None,
        };
        Ok(ModelSettings {
            variant,
            channels: s.take("channels")?,
            skips: s.take("skips")?,
        })
    }

    fn shape(&self, mut cfg: GeneratorConfig) -> GeneratorConfig {
        if let Some(c) = self.channels {
            cfg.channels = c;
        }
        match self.skips.unwrap_or(SkipChoice::Default) {
            SkipChoice::Default => {}
            SkipChoice::Full => cfg = cfg.with_full_skips(),
            SkipChoice::None => cfg.skip_plan.clear(),
        }
        cfg
    }

    /// Config for a fresh model; unset fields fall back to the hybrid
    /// variant's defaults.
    pub fn generator_config(&self) -> GeneratorConfig {
        let variant = self.variant.unwrap_or(GeneratorVariant::Hybrid);
        self.shape(GeneratorConfig::for_variant(variant))
    }

    /// Config for a model restored from `meta`. The checkpoint decides the
    /// architecture; explicitly asking for a different variant or width is
    /// an error, while the skip plan has no weights and may be re-chosen.
    pub fn generator_config_from(&self, meta: &CheckpointMeta) -> Result<GeneratorConfig, CoreError> {
        let variant = GeneratorVariant::parse(&meta.model)?;
        if let Some(v) = self.variant {
            if v != variant {
                return Err(CoreError::config(format!(
                    "checkpoint holds a {} model but the config asks for {}",
                    meta.model,
                    v.name()
                )));
            }
        }
        if let Some(c) = self.channels {
            if c != meta.channels {
                return Err(CoreError::config(format!(
                    "checkpoint holds {} channels but the config asks for {c}",
                    meta.channels
                )));
            }
        }
        let mut cfg = GeneratorConfig {
            variant,
            channels: meta.channels,
            skip_plan: meta.skip_plan.clone(),
        };
        if let Some(choice) = self.skips {
            let fresh = GeneratorConfig::for_variant(variant);
            cfg.skip_plan = match choice {
                SkipChoice::Default => fresh.skip_plan,
                SkipChoice::Full => fresh.with_full_skips().skip_plan,
                SkipChoice::None => Vec::new(),
            };
        }
        Ok(cfg)
    }
}

/// Knobs shared by the training commands. Both phases consume the full set
/// so one config file can drive a whole experiment; each command simply
/// ignores the keys that belong to the other phase.
#[derive(Debug, Clone)]
pub struct TrainingSettings {
    pub model: ModelSettings,
    pub loss: PretrainLoss,
    pub alpha: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patches: usize,
    pub steps: usize,
    pub d_steps_per_g: usize,
    pub lambda_gp: f64,
    pub lambda_m: f64,
    pub patch_hw: usize,
    pub critic_channels: usize,
    pub critic_dense: usize,
    pub seed: u64,
}

impl TrainingSettings {
    pub fn from_settings(s: &mut Settings, default_alpha: f64) -> Result<Self, CoreError> {
        let model = ModelSettings::from_settings(s)?;
        let loss = match s.take::<String>("loss")? {
            Some(name) => PretrainLoss::parse(&name)?,
            None => PretrainLoss::Mse,
        };
        Ok(TrainingSettings {
            model,
            loss,
            alpha: s.take_or("alpha", default_alpha)?,
            batch: s.take_or("batch", 8)?,
            epochs: s.take_or("epochs", 1)?,
            patches: s.take_or("patches", 2048)?,
            steps: s.take_or("steps", 0)?,
            d_steps_per_g: s.take_or("d_steps_per_g", 4)?,
            lambda_gp: s.take_or("lambda_gp", 10.0)?,
            lambda_m: s.take_or("lambda_m", 1e7)?,
            patch_hw: s.take_or("patch_hw", 64)?,
            critic_channels: s.take_or("critic_channels", 64)?,
            critic_dense: s.take_or("critic_dense", 1024)?,
            seed: s.take_or("seed", 0)?,
        })
    }

    /// Critic stages double in width from `critic_channels`.
    pub fn critic_config(&self) -> voxdn_core::models::DiscriminatorConfig {
        let c = self.critic_channels;
        let mut cfg = voxdn_core::models::DiscriminatorConfig::for_input([
            voxdn_core::models::DEPTH_WINDOW,
            self.patch_hw,
            self.patch_hw,
        ]);
        cfg.channels = [c, 2 * c, 4 * c, 8 * c];
        cfg.dense_width = self.critic_dense;
        cfg
    }

    /// Explicit `steps` wins; otherwise one epoch visits `patches` patches
    /// in batches.
    pub fn pretrain_steps(&self) -> usize {
        if self.steps > 0 {
            return self.steps;
        }
        self.epochs * self.patches / self.batch.max(1)
    }

    /// Same budget accounting for the critic updates between generator
    /// steps.
    pub fn wgan_g_steps(&self) -> usize {
        if self.steps > 0 {
            return self.steps;
        }
        let per_g = self.d_steps_per_g + 1;
        self.epochs * self.patches / (self.batch.max(1) * per_g)
    }

    /// Resolved values for the run manifest, stringly and in key order.
    pub fn resolved(&self, cfg: &GeneratorConfig) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("variant".into(), cfg.variant.name().to_string());
        m.insert("channels".into(), cfg.channels.to_string());
        let skips = cfg
            .skip_plan
            .iter()
            .map(|(s, t)| format!("{s}>{t}"))
            .collect::<Vec<_>>()
            .join(" ");
        m.insert("skip_plan".into(), if skips.is_empty() { "none".into() } else { skips });
        m.insert("loss".into(), self.loss.name().to_string());
        m.insert("alpha".into(), self.alpha.to_string());
        m.insert("batch".into(), self.batch.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("patches".into(), self.patches.to_string());
        m.insert("steps".into(), self.steps.to_string());
        m.insert("d_steps_per_g".into(), self.d_steps_per_g.to_string());
        m.insert("lambda_gp".into(), self.lambda_gp.to_string());
        m.insert("lambda_m".into(), self.lambda_m.to_string());
        m.insert("patch_hw".into(), self.patch_hw.to_string());
        m.insert("critic_channels".into(), self.critic_channels.to_string());
        m.insert("critic_dense".into(), self.critic_dense.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m
    }
}
