//! The alternating local/global training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::{Moments, OptimizerState};
use super::config::TrainConfig;
use super::density::{compactness, densify, prune, DensityEvent, DensityReport, GaussStats};
use super::views::{sample_camera, select_view_descriptor, turntable, CameraMode};
use super::OptimError;
use crate::guidance::{
    area_downsample, area_downsample_backward, semantic_sds_grad, AnalyticOracle, GuidanceOracle, NoiseSchedule,
    ScoreTerm, Target,
};
use crate::layout::{build_scene, BuildOptions, LayoutPlan};
use crate::math::{logit, quat_from_wxyz, quat_to_wxyz, sigmoid, Vec3};
use crate::raster::{render_backward, render_composed, render_with, GaussianGrad, Image, RenderOptions, RenderOutput};
use crate::scene::init::SeedParams;
use crate::scene::{Camera, Gaussian3D, Scene, MIN_SCALE};
use crate::semantic::{
    masks_from_features, pool_masks, train_codec, CodecConfig, EmbeddingCodec, EmbeddingProvider, MaskSet,
    PooledMasks, SubpromptSet,
};

/// Parameters per Gaussian row before the embedding: mean, log-scale, raw
/// quaternion, opacity logit, color.
const GAUSS_ROW: usize = 14;
/// Log-scale, raw quaternion, translation.
const TRANSFORM_ROW: usize = 8;
/// Elevation of evaluation and preview turntables, in degrees.
pub const TURNTABLE_ELEVATION: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Local,
    Scene,
    Pair,
}

/// One metrics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: Phase,
    pub objects: Vec<String>,
    /// View descriptor per rendered object.
    pub views: BTreeMap<String, String>,
    pub t: u32,
    /// Mean squared noise residual.
    pub residual: f64,
    pub gaussians: usize,
    pub oracle_calls: usize,
    /// Share of the rendered pixels owned by each `object/subprompt`.
    pub region_shares: BTreeMap<String, f64>,
    pub partition_ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<DensityEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEval {
    pub object: String,
    pub subprompt: String,
    pub pixels: usize,
    pub mean_color: Option<[f64; 3]>,
    pub target: Option<[f64; 3]>,
    /// Largest per-channel deviation from the target.
    pub error: Option<f64>,
}

/// Final evaluation line: mean rendered color inside each region's mask
/// over a turntable of scene views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub phase: String,
    pub regions: Vec<RegionEval>,
    /// Largest error over targeted regions that were seen.
    pub max_error: Option<f64>,
    /// Every targeted region covered at least one pixel.
    pub complete: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub start_step: usize,
    pub final_step: usize,
    pub eval: EvalReport,
}

/// Checkpointed loop state besides the scene, codec and moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopState {
    pub step: usize,
    pub rng: ChaCha8Rng,
    pub stats: Vec<Vec<GaussStats>>,
}

/// Everything the loop owns.
pub struct Session {
    pub config: TrainConfig,
    pub scene: Scene,
    pub codec: EmbeddingCodec,
    pub prompts: SubpromptSet,
    pub schedule: NoiseSchedule,
    pub step: usize,
    pub rng: ChaCha8Rng,
    pub moments: OptimizerState,
    pub stats: Vec<Vec<GaussStats>>,
}

/// Subprompts of a scene in object then region order.
pub fn scene_subprompts(scene: &Scene) -> Vec<(usize, usize, String)> {
    scene
        .objects
        .iter()
        .enumerate()
        .flat_map(|(k, o)| o.regions.iter().enumerate().map(move |(l, r)| (k, l, r.subprompt.clone())))
        .collect()
}

/// Analytic oracle pulling each configured subprompt toward its color and
/// every other prompt toward the background color.
pub fn analytic_oracle(config: &TrainConfig) -> Result<AnalyticOracle, OptimError> {
    let mut oracle = AnalyticOracle::new(config.guidance.schedule()?).with_fallback(Target::Color(config.analytic.background));
    for (prompt, c) in &config.analytic.targets {
        oracle = oracle.with_target(prompt.clone(), Target::Color(*c));
    }
    Ok(oracle)
}

impl Session {
    /// Resolves the plan, embeds and compresses the subprompts, and seeds
    /// the Gaussians. One generator seeded from `config.seed` drives
    /// initialization and then training.
    pub fn initialize(plan: &LayoutPlan, config: &TrainConfig, provider: &dyn EmbeddingProvider) -> Result<Self, OptimError> {
        config.validate()?;
        let layout = plan.resolve()?;
        let prompts = SubpromptSet::from_provider(provider, &layout.subprompts(), config.semantic.tau)?;
        let s = &config.semantic;
        let codec_cfg = CodecConfig {
            d_f: s.d_f,
            hidden: s.hidden,
            epochs: s.codec_epochs,
            learning_rate: s.codec_lr,
            tau: s.codec_tau,
            eval_every: 50,
            seed: config.seed,
        };
        let embeddings: Vec<Vec<f64>> = prompts.entries.iter().map(|e| e.embedding.clone()).collect();
        let codec = train_codec(&embeddings, &codec_cfg)?;
        let mut semantics = vec![Vec::new(); layout.objects.len()];
        for e in &prompts.entries {
            semantics[e.object].push(codec.encode(&e.embedding)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let opts = BuildOptions {
            gaussians_per_object: config.init.gaussians_per_object,
            sampler: config.init.sampler,
            seed: SeedParams {
                opacity: config.init.opacity,
                color: Vec3::from(config.init.color),
                scale_factor: config.init.scale_factor,
            },
        };
        let scene = build_scene(&layout, &semantics, &opts, &mut rng)?;
        Self::from_parts(config.clone(), scene, codec, prompts, rng)
    }

    /// A fresh loop over an existing scene.
    pub fn from_parts(
        config: TrainConfig,
        scene: Scene,
        codec: EmbeddingCodec,
        prompts: SubpromptSet,
        rng: ChaCha8Rng,
    ) -> Result<Self, OptimError> {
        config.validate()?;
        scene.validate()?;
        if codec.d_h() != prompts.d_h() {
            return Err(OptimError::InvalidInput("codec and subprompt embeddings differ in size".into()));
        }
        let d_f = codec.d_f();
        for o in &scene.objects {
            if o.gaussians.iter().any(|g| g.semantic.len() != d_f) {
                return Err(OptimError::InvalidInput(format!("object '{}' has embeddings that are not {d_f}-dimensional", o.id)));
            }
        }
        let moments = OptimizerState {
            gaussians: scene.objects.iter().map(|o| Moments::new(GAUSS_ROW + d_f, o.gaussians.len())).collect(),
            transforms: Moments::new(TRANSFORM_ROW, scene.objects.len()),
        };
        let stats = scene.objects.iter().map(|o| vec![GaussStats::default(); o.gaussians.len()]).collect();
        let schedule = config.guidance.schedule()?;
        Ok(Self { config, scene, codec, prompts, schedule, step: 0, rng, moments, stats })
    }

    pub fn loop_state(&self) -> LoopState {
        LoopState { step: self.step, rng: self.rng.clone(), stats: self.stats.clone() }
    }

    pub fn restore(&mut self, state: LoopState, moments: OptimizerState) -> Result<(), OptimError> {
        let aligned = |rows: &[usize]| {
            rows.len() == self.scene.objects.len()
                && self.scene.objects.iter().zip(rows).all(|(o, r)| o.gaussians.len() == *r)
        };
        let stat_rows: Vec<usize> = state.stats.iter().map(Vec::len).collect();
        let moment_rows: Vec<usize> = moments.gaussians.iter().map(Moments::rows).collect();
        if !aligned(&stat_rows) || !aligned(&moment_rows) || moments.transforms.rows() != self.scene.objects.len() {
            return Err(OptimError::Format("checkpoint state does not match the scene".into()));
        }
        self.step = state.step;
        self.rng = state.rng;
        self.stats = state.stats;
        self.moments = moments;
        Ok(())
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.scene.objects.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    /// What step `step` renders.
    pub fn step_mode(&self, step: usize) -> CameraMode {
        let (l, g) = (self.config.local_steps, self.config.global_steps);
        let n = self.scene.objects.len();
        let (cycle, pos) = (step / (l + g), step % (l + g));
        if pos < l {
            return CameraMode::Local((cycle * l + pos) % n);
        }
        let gi = cycle * g + (pos - l);
        let pairs = self.pairs();
        if pairs.is_empty() || gi % 2 == 0 {
            CameraMode::Scene
        } else {
            let (i, j) = pairs[(gi / 2) % pairs.len()];
            CameraMode::Pair(i, j)
        }
    }

    fn prompt_subset(&self, objects: &[usize]) -> Result<SubpromptSet, OptimError> {
        let entries = self.prompts.entries.iter().filter(|e| objects.contains(&e.object)).cloned().collect();
        Ok(SubpromptSet::new(entries, self.prompts.tau)?)
    }

    fn render_opts(&self) -> RenderOptions {
        RenderOptions { retain: true, feature_dim: Some(self.codec.d_f()) }
    }

    /// Runs one optimization step and returns its metrics.
    pub fn step_once(&mut self, oracle: &dyn GuidanceOracle) -> Result<StepMetrics, OptimError> {
        let cfg = self.config.clone();
        let (w, h) = (cfg.width, cfg.height);
        let mode = self.step_mode(self.step);
        let view = sample_camera(&self.scene, mode, &cfg.camera, w, h, &mut self.rng)?;
        let cam = &view.camera;

        let (phase, objects, null_prompt) = match mode {
            CameraMode::Local(k) | CameraMode::Object(k) => (Phase::Local, vec![k], self.scene.objects[k].prompt.clone()),
            CameraMode::Scene => (Phase::Scene, (0..self.scene.objects.len()).collect(), self.scene.prompt.clone()),
            CameraMode::Pair(i, j) => (
                Phase::Pair,
                vec![i, j],
                format!("{} and {}", self.scene.objects[i].prompt, self.scene.objects[j].prompt),
            ),
        };
        let local = phase == Phase::Local;
        let out = if local {
            render_with(&self.scene.objects[objects[0]].gaussians, cam, &self.render_opts())
        } else {
            render_composed(&self.scene, &objects, cam, &self.render_opts())
        };

        let mut views = BTreeMap::new();
        let mut descriptor = BTreeMap::new();
        for &k in &objects {
            let o = &self.scene.objects[k];
            let center = if local { o.local_bounds().map(|b| b.center()).unwrap_or_default() } else { o.global_center() };
            let d = select_view_descriptor(cam, &o.id, &center, &cfg.views)?;
            views.insert(o.id.clone(), d.label.text().to_string());
            descriptor.insert(k, d.label.text());
        }
        let null_view = select_view_descriptor(cam, "", &cam.look_at, &cfg.views)?.label.text();

        let subset = self.prompt_subset(&objects)?;
        let masks = masks_from_features(&out.features, &out.alpha, &self.codec, &subset, cfg.semantic.background_alpha)?;
        let (gw, gh) = oracle.grid(w, h)?;
        let pooled = pool_masks(&masks, gh, gw, cfg.guidance.pool_max_kernel)?;
        let mut terms: Vec<ScoreTerm> =
            subset.entries.iter().map(|e| ScoreTerm::new(e.text.clone(), descriptor[&e.object])).collect();
        terms.push(ScoreTerm::new(null_prompt, null_view));

        let x = if (gw, gh) == (w, h) { out.color.clone() } else { area_downsample(&out.color, gw, gh)? };
        let t = self.schedule.sample_t(&mut self.rng);
        let rng = &mut self.rng;
        let eps = Image::from_fn(x.width, x.height, x.channels, |_, _, _| rng.sample::<f64, _>(StandardNormal));
        let sds = semantic_sds_grad(&x, &terms, &pooled, oracle, &self.schedule, t, &eps)?;
        let d_color = if (gw, gh) == (w, h) { sds.grad } else { area_downsample_backward(&sds.grad, w, h)? };
        let d_features = Image::zeros(w, h, out.features.channels);
        let grads = render_backward(&out, &d_color, &d_features)?;
        if !grads.is_finite() {
            return Err(OptimError::NonFinite(format!("gradients at step {}", self.step)));
        }

        self.accumulate_stats(&objects, &out, &grads.view_mean, cam);
        let mut offset = 0;
        for &k in &objects {
            let n = self.scene.objects[k].gaussians.len();
            self.update_gaussians(k, &grads.gaussians[offset..offset + n]);
            offset += n;
        }
        if !local {
            for (k, tg) in &grads.transforms {
                let s = self.scene.objects[*k].transform.scale;
                let mut row = [0.0; TRANSFORM_ROW];
                row[0] = tg.scale * s;
                row[1..5].copy_from_slice(tg.rotation.as_slice());
                row[5..8].copy_from_slice(tg.translation.as_slice());
                let lr = &cfg.lr;
                let lrs = [
                    lr.transform_scale,
                    lr.transform_rotation,
                    lr.transform_rotation,
                    lr.transform_rotation,
                    lr.transform_rotation,
                    lr.transform_translation,
                    lr.transform_translation,
                    lr.transform_translation,
                ];
                let mut d = [0.0; TRANSFORM_ROW];
                self.moments.transforms.step(*k, &row, &lrs, &cfg.adam, &mut d);
                let xf = &mut self.scene.objects[*k].transform;
                xf.scale = (xf.scale.ln() + d[0]).exp();
                xf.rotation = quat_from_wxyz(&(quat_to_wxyz(&xf.rotation) + nalgebra::Vector4::from_column_slice(&d[1..5])));
                xf.translation += Vec3::from_column_slice(&d[5..8]);
            }
        }

        let events = self.density_control()?;
        let metrics = StepMetrics {
            step: self.step,
            phase,
            objects: objects.iter().map(|&k| self.scene.objects[k].id.clone()).collect(),
            views,
            t,
            residual: sds.residual,
            gaussians: self.scene.gaussian_count(),
            oracle_calls: sds.composed.oracle_calls,
            region_shares: subset
                .entries
                .iter()
                .zip(masks.shares())
                .map(|(e, s)| (format!("{}/{}", self.scene.objects[e.object].id, e.text), s))
                .collect(),
            partition_ok: partition_holds(&masks, &pooled),
            events,
        };
        self.step += 1;
        Ok(metrics)
    }

    fn accumulate_stats(&mut self, objects: &[usize], out: &RenderOutput, view_mean: &[nalgebra::Vector2<f64>], cam: &Camera) {
        let diag = cam.image_diagonal();
        // Pixel to NDC: x_ndc = 2 x / W - 1.
        let (sx, sy) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
        let mut i = 0;
        for &k in objects {
            for st in self.stats[k].iter_mut() {
                let r = out.screen_radii[i];
                if r > 0.0 {
                    st.grad_accum += (view_mean[i].x * sx).hypot(view_mean[i].y * sy);
                    st.visible += 1;
                    st.max_screen = st.max_screen.max(r / diag);
                }
                i += 1;
            }
        }
    }

    fn update_gaussians(&mut self, k: usize, grads: &[GaussianGrad]) {
        let lr = &self.config.lr;
        let d_f = self.codec.d_f();
        let train_sem = self.config.train_semantic;
        let mut lrs = vec![0.0; GAUSS_ROW + d_f];
        lrs[0..3].fill(lr.mean);
        lrs[3..6].fill(lr.scale);
        lrs[6..10].fill(lr.rotation);
        lrs[10] = lr.opacity;
        lrs[11..14].fill(lr.color);
        lrs[14..].fill(if train_sem { lr.semantic } else { 0.0 });
        let mut row = vec![0.0; GAUSS_ROW + d_f];
        let mut d = vec![0.0; GAUSS_ROW + d_f];
        let adam = self.config.adam.clone();
        let moments = &mut self.moments.gaussians[k];
        for (i, (g, gr)) in self.scene.objects[k].gaussians.iter_mut().zip(grads).enumerate() {
            gaussian_grad_row(g, gr, train_sem, &mut row);
            moments.step(i, &row, &lrs, &adam, &mut d);
            apply_gaussian_delta(g, &d, train_sem);
        }
    }

    /// Prune, then densify and compactness on their intervals. Statistics
    /// follow pruning and are reset after growth.
    fn density_control(&mut self) -> Result<Vec<DensityEvent>, OptimError> {
        let done = self.step + 1;
        let (d, p) = (self.config.densify.clone(), self.config.prune.clone());
        let mut events = Vec::new();
        if p.enabled && done % p.interval == 0 {
            let report = prune(&mut self.scene, &self.stats, &p)?;
            self.apply_report(&report, true);
            events.extend(report.events);
        }
        let in_window = d.enabled && done >= d.start && done <= d.until;
        let mut grew = false;
        if in_window && done % d.interval == 0 {
            let report = densify(&mut self.scene, &self.stats, &d, &mut self.rng)?;
            self.apply_report(&report, false);
            events.extend(report.events);
            grew = true;
        }
        if in_window && done % d.compactness_interval == 0 {
            let report = compactness(&mut self.scene, &d);
            self.apply_report(&report, false);
            events.extend(report.events);
            grew = true;
        }
        if grew {
            for (st, o) in self.stats.iter_mut().zip(&self.scene.objects) {
                *st = vec![GaussStats::default(); o.gaussians.len()];
            }
        }
        Ok(events)
    }

    fn apply_report(&mut self, report: &DensityReport, keep_stats: bool) {
        for (k, origin) in report.origins.iter().enumerate() {
            self.moments.gaussians[k].remap(origin);
            if keep_stats {
                let old = &self.stats[k];
                self.stats[k] = origin.iter().map(|o| o.map(|j| old[j]).unwrap_or_default()).collect();
            }
        }
    }

    /// Mean rendered color inside each region's mask over `cameras`.
    pub fn evaluate(&self, cameras: &[Camera]) -> Result<EvalReport, OptimError> {
        let n = self.prompts.len();
        let mut sums = vec![[0.0; 3]; n];
        let mut counts = vec![0usize; n];
        let all: Vec<usize> = (0..self.scene.objects.len()).collect();
        let opts = RenderOptions { retain: false, feature_dim: Some(self.codec.d_f()) };
        for cam in cameras {
            let out = render_composed(&self.scene, &all, cam, &opts);
            let masks =
                masks_from_features(&out.features, &out.alpha, &self.codec, &self.prompts, self.config.semantic.background_alpha)?;
            for (p, &l) in masks.labels.iter().enumerate() {
                if (l as usize) < n {
                    for c in 0..3 {
                        sums[l as usize][c] += out.color.data[p * 3 + c];
                    }
                    counts[l as usize] += 1;
                }
            }
        }
        let mut regions = Vec::with_capacity(n);
        let mut max_error: Option<f64> = None;
        let mut complete = true;
        for (i, e) in self.prompts.entries.iter().enumerate() {
            let mean = (counts[i] > 0).then(|| sums[i].map(|s| s / counts[i] as f64));
            let target = self.config.analytic.targets.get(&e.text).copied();
            let error = match (mean, target) {
                (Some(m), Some(t)) => Some((0..3).map(|c| (m[c] - t[c]).abs()).fold(0.0, f64::max)),
                _ => None,
            };
            if target.is_some() && mean.is_none() {
                complete = false;
            }
            if let Some(err) = error {
                max_error = Some(max_error.map_or(err, |m| m.max(err)));
            }
            regions.push(RegionEval {
                object: self.scene.objects[e.object].id.clone(),
                subprompt: e.text.clone(),
                pixels: counts[i],
                mean_color: mean,
                target,
                error,
            });
        }
        Ok(EvalReport { step: self.step, phase: "eval".into(), regions, max_error, complete })
    }

    pub fn turntable(&self, views: usize) -> Result<Vec<Camera>, OptimError> {
        turntable(&self.scene, &self.config.camera, views, TURNTABLE_ELEVATION, self.config.width, self.config.height)
    }

    /// Writes `views` turntable frames as PNGs into `dir`.
    pub fn write_previews(&self, dir: &Path, views: usize) -> Result<(), OptimError> {
        std::fs::create_dir_all(dir)?;
        let all: Vec<usize> = (0..self.scene.objects.len()).collect();
        let opts = RenderOptions { retain: false, feature_dim: Some(0) };
        for (i, cam) in self.turntable(views)?.iter().enumerate() {
            let out = render_composed(&self.scene, &all, cam, &opts);
            out.color.save_png(&dir.join(format!("view_{i:02}.png")))?;
        }
        Ok(())
    }

    /// Runs until `config.iterations`, writing one metrics line per logged
    /// step and a final evaluation line. With `artifacts`, previews and
    /// checkpoints go under it; a failed step still leaves a checkpoint.
    pub fn train(
        &mut self,
        oracle: &dyn GuidanceOracle,
        metrics: &mut dyn Write,
        artifacts: Option<&Path>,
    ) -> Result<TrainSummary, OptimError> {
        let start_step = self.step;
        let out = self.config.output.clone();
        while self.step < self.config.iterations {
            let m = match self.step_once(oracle) {
                Ok(m) => m,
                Err(e) => {
                    if let Some(dir) = artifacts {
                        self.save_checkpoint(&dir.join("checkpoint"))?;
                    }
                    return Err(e);
                }
            };
            let last = self.step == self.config.iterations;
            if m.step % out.log_every.max(1) == 0 || !m.events.is_empty() || last {
                writeln!(metrics, "{}", serde_json::to_string(&m)?)?;
            }
            if let Some(dir) = artifacts {
                if out.preview_every > 0 && self.step % out.preview_every == 0 {
                    self.write_previews(&dir.join("previews").join(format!("step_{:06}", self.step)), out.preview_views)?;
                }
                if out.checkpoint_every > 0 && self.step % out.checkpoint_every == 0 && !last {
                    self.save_checkpoint(&dir.join("checkpoint"))?;
                }
            }
        }
        let eval = self.evaluate(&self.turntable(out.preview_views.max(1))?)?;
        writeln!(metrics, "{}", serde_json::to_string(&eval)?)?;
        metrics.flush()?;
        if let Some(dir) = artifacts {
            self.save_checkpoint(&dir.join("checkpoint"))?;
            if out.preview_views > 0 {
                self.write_previews(&dir.join("previews").join("final"), out.preview_views)?;
            }
        }
        Ok(TrainSummary { start_step, final_step: self.step, eval })
    }
}

/// Every pixel has exactly one owner, and every pooled cell is either
/// covered by some region mask or is background, never both or neither.
pub fn partition_holds(masks: &MaskSet, pooled: &PooledMasks) -> bool {
    let n = masks.n_prompts;
    let pixels_ok = masks.labels.len() == masks.width * masks.height
        && masks.labels.iter().all(|&l| (l as usize) <= n)
        && masks.counts().iter().sum::<usize>() == masks.labels.len();
    let cells = pooled.width * pooled.height;
    let grids_ok = pooled.masks.len() == n + 1 && pooled.masks.iter().all(|m| m.len() == cells);
    pixels_ok
        && grids_ok
        && (0..cells).all(|c| {
            let covered = pooled.masks[..n].iter().any(|m| m[c] != 0);
            covered != (pooled.masks[n][c] != 0)
        })
}

fn gaussian_grad_row(g: &Gaussian3D, gr: &GaussianGrad, train_semantic: bool, row: &mut [f64]) {
    row[0..3].copy_from_slice(gr.mean.as_slice());
    for a in 0..3 {
        row[3 + a] = gr.scale[a] * g.scale[a];
    }
    row[6..10].copy_from_slice(gr.rotation.as_slice());
    let op = g.opacity.clamp(1e-6, 1.0 - 1e-6);
    row[10] = gr.opacity * op * (1.0 - op);
    row[11..14].copy_from_slice(gr.color.as_slice());
    for (r, v) in row[GAUSS_ROW..].iter_mut().zip(&gr.semantic) {
        *r = if train_semantic { *v } else { 0.0 };
    }
}

fn apply_gaussian_delta(g: &mut Gaussian3D, d: &[f64], train_semantic: bool) {
    g.mean += Vec3::from_column_slice(&d[0..3]);
    for a in 0..3 {
        g.scale[a] = (g.scale[a].ln() + d[3 + a]).exp().max(MIN_SCALE);
    }
    g.rotation = quat_from_wxyz(&(quat_to_wxyz(&g.rotation) + nalgebra::Vector4::from_column_slice(&d[6..10])));
    g.opacity = sigmoid(logit(g.opacity.clamp(1e-6, 1.0 - 1e-6)) + d[10]);
    for c in 0..3 {
        g.color[c] = (g.color[c] + d[11 + c]).clamp(0.0, 1.0);
    }
    if train_semantic {
        for (s, v) in g.semantic.iter_mut().zip(&d[GAUSS_ROW..]) {
            *s += v;
        }
    }
}
