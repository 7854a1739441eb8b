//! Training configuration: one TOML document with `key=value` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::guidance::{NoiseSchedule, Weighting};
use crate::scene::init::Sampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub width: usize,
    pub height: usize,
    /// Local steps per cycle, followed by `global_steps` global steps.
    pub local_steps: usize,
    pub global_steps: usize,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub train_semantic: bool,
    pub init: InitConfig,
    pub densify: DensifyConfig,
    pub prune: PruneConfig,
    pub camera: CameraConfig,
    pub views: ViewConfig,
    pub semantic: SemanticConfig,
    pub guidance: GuidanceConfig,
    pub analytic: AnalyticConfig,
    pub output: OutputConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 2000,
            width: 128,
            height: 128,
            local_steps: 1,
            global_steps: 1,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            train_semantic: false,
            init: InitConfig::default(),
            densify: DensifyConfig::default(),
            prune: PruneConfig::default(),
            camera: CameraConfig::default(),
            views: ViewConfig::default(),
            semantic: SemanticConfig::default(),
            guidance: GuidanceConfig::default(),
            analytic: AnalyticConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub mean: f64,
    /// Applied to log-scales.
    pub scale: f64,
    pub rotation: f64,
    /// Applied to opacity logits.
    pub opacity: f64,
    pub color: f64,
    pub semantic: f64,
    /// Applied to the log of each object's scale factor.
    pub transform_scale: f64,
    pub transform_rotation: f64,
    pub transform_translation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1e-3,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 2e-2,
            color: 1e-2,
            semantic: 1e-3,
            transform_scale: 1e-4,
            transform_rotation: 1e-4,
            transform_translation: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub gaussians_per_object: usize,
    pub sampler: Sampler,
    pub opacity: f64,
    pub color: [f64; 3],
    pub scale_factor: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            gaussians_per_object: crate::scene::init::DEFAULT_GAUSSIANS_PER_OBJECT,
            sampler: Sampler::UniformBox,
            opacity: 0.7,
            color: [0.5; 3],
            scale_factor: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    pub until: usize,
    /// Threshold on the mean view-space position gradient norm.
    pub t_pos: f64,
    /// Gaussians larger than this share of their object's extent are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
    pub split_factor: f64,
    pub max_gaussians: usize,
    pub compactness_interval: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 100,
            until: 15_000,
            t_pos: 2.0,
            percent_dense: 0.01,
            split_factor: 1.6,
            max_gaussians: 200_000,
            compactness_interval: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub enabled: bool,
    pub interval: usize,
    pub alpha_min: f64,
    /// World radius limit as a share of the scene extent.
    pub max_world_radius: f64,
    /// Screen radius limit as a share of the image diagonal.
    pub max_screen_radius: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { enabled: true, interval: 200, alpha_min: 0.3, max_world_radius: 0.1, max_screen_radius: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub elevation_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub fov_deg: [f64; 2],
    /// Camera distance as a multiple of the framed radius.
    pub distance_factor: [f64; 2],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            elevation_deg: [-10.0, 70.0],
            azimuth_deg: [-180.0, 180.0],
            fov_deg: [40.0, 55.0],
            distance_factor: [2.2, 2.8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Elevations above this are overhead views.
    pub overhead_deg: f64,
    /// Half-width of the front and back azimuth sectors.
    pub front_half_width_deg: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { overhead_deg: 60.0, front_half_width_deg: 45.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Pseudo,
    File,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticConfig {
    pub embedder: EmbedderKind,
    pub embedder_seed: u64,
    pub d_h: usize,
    /// Embedding table header for the file embedder.
    pub table: Option<String>,
    pub d_f: usize,
    pub hidden: usize,
    pub tau: f64,
    pub codec_epochs: usize,
    pub codec_lr: f64,
    pub codec_tau: f64,
    pub background_alpha: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderKind::Pseudo,
            embedder_seed: 0,
            d_h: 512,
            table: None,
            d_f: 16,
            hidden: 256,
            tau: 0.01,
            codec_epochs: 1500,
            codec_lr: 1e-3,
            codec_tau: 0.01,
            background_alpha: crate::semantic::BACKGROUND_ALPHA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub steps: u32,
    pub beta_start: f64,
    pub beta_end: f64,
    pub weighting: Weighting,
    pub t_min: u32,
    pub t_max: u32,
    /// Dilation kernel applied to pooled masks.
    pub pool_max_kernel: usize,
    pub cfg_scale: f64,
    pub url: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
    /// Recording replayed by the recorded oracle.
    pub recording: Option<String>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 8.5e-4,
            beta_end: 1.2e-2,
            weighting: Weighting::OneMinusAlphaBar,
            t_min: 20,
            t_max: 980,
            pool_max_kernel: 5,
            cfg_scale: 7.5,
            url: None,
            timeout_secs: 60.0,
            retries: 3,
            recording: None,
        }
    }
}

impl GuidanceConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule, OptimError> {
        Ok(NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end, self.weighting, self.t_min, self.t_max)?)
    }
}

/// Targets for the analytic oracle: a color per subprompt, and the color
/// everything else is pulled toward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticConfig {
    pub targets: BTreeMap<String, [f64; 3]>,
    pub background: [f64; 3],
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        Self { targets: BTreeMap::new(), background: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Steps between metrics lines; 1 logs every step.
    pub log_every: usize,
    /// Steps between turntable previews; 0 disables them.
    pub preview_every: usize,
    pub preview_views: usize,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { log_every: 1, preview_every: 500, preview_views: 8, checkpoint_every: 0 }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, OptimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| OptimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OptimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Keys use TOML dotted-key
    /// syntax; values are read as TOML literals, falling back to plain
    /// strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, OptimError> {
        let mut doc = toml::Table::try_from(self).map_err(|e| OptimError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| OptimError::Config(format!("override '{o}' is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let patch = toml::from_str::<toml::Table>(&format!("{key} = {raw}"))
                .or_else(|_| toml::from_str::<toml::Table>(&format!("{key} = {}", toml::Value::String(raw.into()))))
                .map_err(|e| OptimError::Config(format!("override '{o}': {e}")))?;
            merge(&mut doc, patch);
        }
        let cfg: Self = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| OptimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("render size must be positive".into());
        }
        if self.local_steps + self.global_steps == 0 {
            return bad("local_steps and global_steps cannot both be zero".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        let d = &self.densify;
        if d.interval == 0 || d.compactness_interval == 0 || self.prune.interval == 0 {
            return bad("densify, compactness and prune intervals must be positive".into());
        }
        if !(d.split_factor > 1.0) || !(d.t_pos > 0.0) {
            return bad("split_factor must exceed 1 and t_pos must be positive".into());
        }
        if !(self.prune.alpha_min > 0.0 && self.prune.alpha_min < 1.0) {
            return bad(format!("alpha_min {} outside (0, 1)", self.prune.alpha_min));
        }
        let c = &self.camera;
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !ordered(c.elevation_deg) || c.elevation_deg[0] < -89.0 || c.elevation_deg[1] > 89.0 {
            return bad("elevation range must be ordered and inside [-89, 89] degrees".into());
        }
        if !ordered(c.azimuth_deg) || !ordered(c.fov_deg) || c.fov_deg[0] <= 0.0 || c.fov_deg[1] >= 180.0 {
            return bad("azimuth and fov ranges must be ordered, fov inside (0, 180)".into());
        }
        if !ordered(c.distance_factor) || c.distance_factor[0] <= 0.0 {
            return bad("distance factors must be positive and ordered".into());
        }
        let v = &self.views;
        if !(0.0..=90.0).contains(&v.overhead_deg) || !(0.0..=90.0).contains(&v.front_half_width_deg) {
            return bad("view thresholds must lie in [0, 90] degrees".into());
        }
        let s = &self.semantic;
        if !(s.tau > 0.0) || s.d_f == 0 || s.d_h == 0 || s.hidden == 0 {
            return bad("semantic tau and dimensions must be positive".into());
        }
        if self.guidance.pool_max_kernel % 2 == 0 {
            return bad("pool_max_kernel must be odd".into());
        }
        self.guidance.schedule()?;
        Ok(())
    }
}

fn merge(dst: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(p)) => merge(d, p),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = TrainConfig::default()
            .with_overrides(&["iterations=5", "densify.t_pos = 3.5", "analytic.targets.\"red top\" = [1, 0, 0]", "semantic.table=emb.json"])
            .unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.densify.t_pos, 3.5);
        assert_eq!(cfg.analytic.targets["red top"], [1.0, 0.0, 0.0]);
        assert_eq!(cfg.semantic.table.as_deref(), Some("emb.json"));
        assert!(TrainConfig::default().with_overrides(&["nonsense=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["iterations"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["prune.alpha_min=1.5"]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(TrainConfig::from_toml("[densify]\nthreshold = 2").is_err());
    }
}
