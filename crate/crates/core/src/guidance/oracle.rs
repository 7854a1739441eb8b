//! Noise predictors: an exact analytic oracle, the HTTP service, and replay
//! of recorded calls.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GuidanceError, NoiseSchedule};
use crate::raster::Image;
use crate::service::{PredictRequest, ServiceClient, WireTensor};

pub trait GuidanceOracle: Send + Sync {
    /// `(width, height)` of the grid the oracle works on for a render of the
    /// given size.
    fn grid(&self, render_width: usize, render_height: usize) -> Result<(usize, usize), GuidanceError>;

    /// Predicted noise for `x_t` conditioned on `prompt, view_descriptor`.
    fn predict_noise(&self, x_t: &Image, prompt: &str, view_descriptor: &str, t: u32) -> Result<Image, GuidanceError>;
}

/// Joins a prompt and its view descriptor the way the service does.
pub fn conditioned_prompt(prompt: &str, view_descriptor: &str) -> String {
    if view_descriptor.is_empty() {
        prompt.to_string()
    } else {
        format!("{prompt}, {view_descriptor}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Color([f64; 3]),
    Image(Image),
}

/// Knows the clean image for each prompt and returns the noise that maps it
/// to `x_t`: `(x_t - sqrt(a) target) / sqrt(1 - a)`. Prompts are matched
/// without their view descriptor; unknown prompts use the fallback target.
#[derive(Clone, Debug)]
pub struct AnalyticOracle {
    pub schedule: NoiseSchedule,
    pub targets: BTreeMap<String, Target>,
    pub fallback: Option<Target>,
}

impl AnalyticOracle {
    pub fn new(schedule: NoiseSchedule) -> Self {
        Self { schedule, targets: BTreeMap::new(), fallback: None }
    }

    pub fn with_target(mut self, prompt: impl Into<String>, target: Target) -> Self {
        self.targets.insert(prompt.into(), target);
        self
    }

    pub fn with_fallback(mut self, target: Target) -> Self {
        self.fallback = Some(target);
        self
    }

    fn target_for(&self, prompt: &str) -> Result<&Target, GuidanceError> {
        self.targets
            .get(prompt)
            .or(self.fallback.as_ref())
            .ok_or_else(|| GuidanceError::InvalidInput(format!("analytic oracle has no target for '{prompt}'")))
    }
}

impl GuidanceOracle for AnalyticOracle {
    fn grid(&self, w: usize, h: usize) -> Result<(usize, usize), GuidanceError> {
        Ok((w, h))
    }

    fn predict_noise(&self, x_t: &Image, prompt: &str, _view: &str, t: u32) -> Result<Image, GuidanceError> {
        let a = self.schedule.alpha_bar(t)?;
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let mut out = x_t.clone();
        match self.target_for(prompt)? {
            Target::Color(c) => {
                if x_t.channels != 3 {
                    return Err(GuidanceError::InvalidInput(format!("color target needs 3 channels, x_t has {}", x_t.channels)));
                }
                for px in out.data.chunks_mut(3) {
                    for (v, c) in px.iter_mut().zip(c) {
                        *v = (*v - sa * c) / sn;
                    }
                }
            }
            Target::Image(img) => {
                if !img.same_shape(x_t) {
                    return Err(GuidanceError::InvalidInput(format!(
                        "target for '{prompt}' is {}x{}x{}, x_t is {}x{}x{}",
                        img.height, img.width, img.channels, x_t.height, x_t.width, x_t.channels
                    )));
                }
                for (v, c) in out.data.iter_mut().zip(&img.data) {
                    *v = (*v - sa * c) / sn;
                }
            }
        }
        Ok(out)
    }
}

/// Row-major HWC image to channel-major f32.
pub fn image_to_chw(img: &Image) -> Vec<f32> {
    let mut out = vec![0.0f32; img.data.len()];
    let plane = img.width * img.height;
    for (p, px) in img.data.chunks(img.channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            out[c * plane + p] = *v as f32;
        }
    }
    out
}

pub fn chw_to_image(data: &[f32], width: usize, height: usize, channels: usize) -> Result<Image, GuidanceError> {
    let plane = width * height;
    if data.len() != plane * channels {
        return Err(GuidanceError::InvalidInput(format!(
            "{} values cannot fill {channels}x{height}x{width}",
            data.len()
        )));
    }
    Ok(Image::from_fn(width, height, channels, |x, y, c| data[c * plane + y * width + x] as f64))
}

/// Oracle backed by the HTTP guidance service. It sends RGB images
/// area-downsampled to the service's declared grid as `[3, h, w]` tensors;
/// turning them into model latents is the service's business.
pub struct RemoteOracle {
    client: ServiceClient,
    latent: (usize, usize),
    pub cfg_scale: f64,
}

impl RemoteOracle {
    /// Performs the health handshake and adopts the declared grid.
    pub fn connect(client: ServiceClient, cfg_scale: f64) -> Result<Self, GuidanceError> {
        let health = client.health()?;
        if !health.ok {
            return Err(GuidanceError::InvalidInput(format!("guidance service '{}' is not ready", health.model_id)));
        }
        let (h, w) = health.latent_hw.dims();
        if h == 0 || w == 0 {
            return Err(GuidanceError::InvalidInput("service declared an empty latent grid".into()));
        }
        log::info!("guidance service {} ready, grid {h}x{w}", health.model_id);
        Ok(Self { client, latent: (h, w), cfg_scale })
    }
}

impl GuidanceOracle for RemoteOracle {
    fn grid(&self, w: usize, h: usize) -> Result<(usize, usize), GuidanceError> {
        let (lh, lw) = self.latent;
        if h % lh != 0 || w % lw != 0 || h / lh != w / lw {
            return Err(GuidanceError::InvalidInput(format!(
                "render size {w}x{h} is not an integer multiple of the service grid {lw}x{lh}"
            )));
        }
        Ok((lw, lh))
    }

    fn predict_noise(&self, x_t: &Image, prompt: &str, view: &str, t: u32) -> Result<Image, GuidanceError> {
        let shape = [x_t.channels, x_t.height, x_t.width];
        let req = PredictRequest {
            prompt: prompt.to_string(),
            view_descriptor: view.to_string(),
            t,
            x_t: WireTensor::encode(&image_to_chw(x_t), &shape)?,
            cfg_scale: self.cfg_scale,
        };
        let eps = self.client.predict_noise(&req)?;
        chw_to_image(&eps, x_t.width, x_t.height, x_t.channels)
    }
}

/// One oracle call as stored in a JSON-lines recording.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordedCall {
    pub prompt: String,
    pub view_descriptor: String,
    pub t: u32,
    pub x_t: WireTensor,
    pub epsilon: WireTensor,
}

type CallKey = (String, String, u32, String);

/// Replays recorded calls, matched on prompt, descriptor, timestep and the
/// exact f32 bytes of `x_t`.
pub struct RecordedOracle {
    calls: HashMap<CallKey, WireTensor>,
    grid: Option<(usize, usize)>,
}

impl RecordedOracle {
    pub fn load(path: &Path) -> Result<Self, GuidanceError> {
        let file = std::fs::File::open(path)?;
        let mut calls = HashMap::new();
        let mut grids = std::collections::BTreeSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let call: RecordedCall = serde_json::from_str(&line)
                .map_err(|e| GuidanceError::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if call.x_t.shape.len() != 3 || call.epsilon.shape != call.x_t.shape {
                return Err(GuidanceError::InvalidInput(format!(
                    "{}:{}: shapes {:?} / {:?} are not matching [c, h, w]",
                    path.display(),
                    i + 1,
                    call.x_t.shape,
                    call.epsilon.shape
                )));
            }
            grids.insert((call.x_t.shape[2], call.x_t.shape[1]));
            calls.insert((call.prompt, call.view_descriptor, call.t, call.x_t.data), call.epsilon);
        }
        let grid = if grids.len() == 1 { grids.into_iter().next() } else { None };
        Ok(Self { calls, grid })
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

impl GuidanceOracle for RecordedOracle {
    fn grid(&self, w: usize, h: usize) -> Result<(usize, usize), GuidanceError> {
        Ok(self.grid.unwrap_or((w, h)))
    }

    fn predict_noise(&self, x_t: &Image, prompt: &str, view: &str, t: u32) -> Result<Image, GuidanceError> {
        let shape = [x_t.channels, x_t.height, x_t.width];
        let x = WireTensor::encode(&image_to_chw(x_t), &shape)?;
        let key = (prompt.to_string(), view.to_string(), t, x.data);
        let eps = self.calls.get(&key).ok_or_else(|| {
            GuidanceError::NotRecorded(format!("no recording for '{}' at t={t}", conditioned_prompt(prompt, view)))
        })?;
        if eps.shape != shape {
            return Err(GuidanceError::InvalidInput(format!("recorded epsilon has shape {:?}", eps.shape)));
        }
        chw_to_image(&eps.decode()?, x_t.width, x_t.height, x_t.channels)
    }
}

/// Wraps an oracle and appends every call to a JSON-lines file that
/// [`RecordedOracle`] can replay.
pub struct RecordingOracle<O> {
    inner: O,
    out: Mutex<BufWriter<std::fs::File>>,
}

impl<O: GuidanceOracle> RecordingOracle<O> {
    pub fn create(inner: O, path: &Path) -> Result<Self, GuidanceError> {
        Ok(Self { inner, out: Mutex::new(BufWriter::new(std::fs::File::create(path)?)) })
    }

    pub fn flush(&self) -> Result<(), GuidanceError> {
        self.out.lock().expect("recording lock").flush()?;
        Ok(())
    }
}

impl<O: GuidanceOracle> GuidanceOracle for RecordingOracle<O> {
    fn grid(&self, w: usize, h: usize) -> Result<(usize, usize), GuidanceError> {
        self.inner.grid(w, h)
    }

    fn predict_noise(&self, x_t: &Image, prompt: &str, view: &str, t: u32) -> Result<Image, GuidanceError> {
        let eps = self.inner.predict_noise(x_t, prompt, view, t)?;
        let shape = [x_t.channels, x_t.height, x_t.width];
        let call = RecordedCall {
            prompt: prompt.to_string(),
            view_descriptor: view.to_string(),
            t,
            x_t: WireTensor::encode(&image_to_chw(x_t), &shape)?,
            epsilon: WireTensor::encode(&image_to_chw(&eps), &shape)?,
        };
        let mut out = self.out.lock().expect("recording lock");
        serde_json::to_writer(&mut *out, &call)?;
        out.write_all(b"\n")?;
        // Replays see f32 values, so hand back what was stored.
        chw_to_image(&call.epsilon.decode()?, x_t.width, x_t.height, x_t.channels)
    }
}
