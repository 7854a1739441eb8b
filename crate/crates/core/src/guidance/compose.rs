//! Region-wise composition of noise predictions and the SDS gradients.

use rayon::prelude::*;

use super::{add_noise, GuidanceError, GuidanceOracle, NoiseSchedule};
use crate::raster::Image;
use crate::semantic::PooledMasks;

/// One conditioning used in a composed prediction: a (sub)prompt and the
/// view descriptor of the object it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreTerm {
    pub prompt: String,
    pub view_descriptor: String,
}

impl ScoreTerm {
    pub fn new(prompt: impl Into<String>, view_descriptor: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), view_descriptor: view_descriptor.into() }
    }
}

#[derive(Clone, Debug)]
pub struct ComposedScore {
    pub epsilon: Image,
    /// Which terms had a nonempty mask and were sent to the oracle.
    pub used: Vec<bool>,
    pub oracle_calls: usize,
}

/// Combines per-term predictions cell by cell. A cell covered by one mask
/// takes that term's prediction verbatim; where dilated masks overlap the
/// covering predictions are averaged (or copied when they agree exactly). Terms with empty masks are skipped.
pub fn compose_scores(
    x_t: &Image,
    terms: &[ScoreTerm],
    masks: &PooledMasks,
    oracle: &dyn GuidanceOracle,
    t: u32,
) -> Result<ComposedScore, GuidanceError> {
    if masks.width != x_t.width || masks.height != x_t.height {
        return Err(GuidanceError::InvalidInput(format!(
            "masks are {}x{}, x_t is {}x{}",
            masks.height, masks.width, x_t.height, x_t.width
        )));
    }
    if masks.masks.len() != terms.len() {
        return Err(GuidanceError::InvalidInput(format!("{} masks for {} terms", masks.masks.len(), terms.len())));
    }
    let cells = x_t.width * x_t.height;
    if let Some(bad) = masks.masks.iter().find(|m| m.len() != cells) {
        return Err(GuidanceError::InvalidInput(format!("mask has {} cells, expected {cells}", bad.len())));
    }
    let used: Vec<bool> = masks.masks.iter().map(|m| m.iter().any(|&v| v != 0)).collect();
    let active: Vec<usize> = (0..terms.len()).filter(|&i| used[i]).collect();
    let predictions = active
        .par_iter()
        .map(|&i| {
            let term = &terms[i];
            let eps = oracle.predict_noise(x_t, &term.prompt, &term.view_descriptor, t)?;
            if !eps.same_shape(x_t) {
                return Err(GuidanceError::InvalidInput(format!(
                    "oracle returned {}x{}x{} for {}x{}x{}",
                    eps.height, eps.width, eps.channels, x_t.height, x_t.width, x_t.channels
                )));
            }
            Ok(eps)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let c = x_t.channels;
    let mut epsilon = Image::zeros(x_t.width, x_t.height, c);
    let mut acc = vec![0.0; c];
    for cell in 0..cells {
        let mut first: Option<usize> = None;
        let mut count = 0usize;
        let mut agree = true;
        acc.fill(0.0);
        for (j, &i) in active.iter().enumerate() {
            if masks.masks[i][cell] != 0 {
                let px = &predictions[j].data[cell * c..(cell + 1) * c];
                match first {
                    None => first = Some(j),
                    Some(f) => agree &= px == &predictions[f].data[cell * c..(cell + 1) * c],
                }
                count += 1;
                for (a, v) in acc.iter_mut().zip(&predictions[j].data[cell * c..(cell + 1) * c]) {
                    *a += v;
                }
            }
        }
        let out = &mut epsilon.data[cell * c..(cell + 1) * c];
        match (first, count) {
            (None, _) => {
                return Err(GuidanceError::InvalidInput(format!(
                    "cell ({}, {}) is covered by no mask",
                    cell % x_t.width,
                    cell / x_t.width
                )))
            }
            (Some(j), n) if n == 1 || agree => out.copy_from_slice(&predictions[j].data[cell * c..(cell + 1) * c]),
            (Some(_), n) => {
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o = a / n as f64;
                }
            }
        }
    }
    Ok(ComposedScore { epsilon, used, oracle_calls: active.len() })
}

#[derive(Clone, Debug)]
pub struct SdsStep {
    /// `dL/dx` in the oracle's space.
    pub grad: Image,
    pub composed: ComposedScore,
    /// Mean squared residual `|eps_hat - eps|^2`, a loss proxy for logging.
    pub residual: f64,
}

/// `dL/dx = w(t) (eps_hat(x_t) - eps)` with `x_t` the noised input and
/// `eps_hat` composed from the masked terms.
#[allow(clippy::too_many_arguments)]
pub fn semantic_sds_grad(
    x: &Image,
    terms: &[ScoreTerm],
    masks: &PooledMasks,
    oracle: &dyn GuidanceOracle,
    schedule: &NoiseSchedule,
    t: u32,
    eps: &Image,
) -> Result<SdsStep, GuidanceError> {
    if !eps.same_shape(x) {
        return Err(GuidanceError::InvalidInput("noise and image shapes differ".into()));
    }
    let x_t = Image { data: add_noise(schedule, &x.data, t, &eps.data)?, ..x.clone() };
    let composed = compose_scores(&x_t, terms, masks, oracle, t)?;
    let w = schedule.weight(t)?;
    let mut grad = composed.epsilon.clone();
    let mut sq = 0.0;
    for (g, e) in grad.data.iter_mut().zip(&eps.data) {
        let r = *g - e;
        sq += r * r;
        *g = w * r;
    }
    let residual = sq / grad.data.len().max(1) as f64;
    Ok(SdsStep { grad, composed, residual })
}

/// Single-prompt SDS: the composed form with one all-covering mask.
pub fn plain_sds_grad(
    x: &Image,
    term: &ScoreTerm,
    oracle: &dyn GuidanceOracle,
    schedule: &NoiseSchedule,
    t: u32,
    eps: &Image,
) -> Result<SdsStep, GuidanceError> {
    semantic_sds_grad(x, std::slice::from_ref(term), &PooledMasks::full(x.width, x.height), oracle, schedule, t, eps)
}

/// Block-averages an image by an integer factor to `w x h`.
pub fn area_downsample(img: &Image, w: usize, h: usize) -> Result<Image, GuidanceError> {
    let (f, fy) = factors(img, w, h)?;
    if f == 1 && fy == 1 {
        return Ok(img.clone());
    }
    let norm = 1.0 / (f * fy) as f64;
    let c = img.channels;
    let mut out = Image::zeros(w, h, c);
    for y in 0..img.height {
        for x in 0..img.width {
            let dst = ((y / fy) * w + x / f) * c;
            for (o, v) in out.data[dst..dst + c].iter_mut().zip(img.pixel(x, y)) {
                *o += v * norm;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`area_downsample`]: spreads each cell's gradient evenly
/// over its block.
pub fn area_downsample_backward(grad: &Image, width: usize, height: usize) -> Result<Image, GuidanceError> {
    let probe = Image::zeros(width, height, grad.channels);
    let (f, fy) = factors(&probe, grad.width, grad.height)?;
    if f == 1 && fy == 1 {
        return Ok(grad.clone());
    }
    let norm = 1.0 / (f * fy) as f64;
    Ok(Image::from_fn(width, height, grad.channels, |x, y, c| grad.at(x / f, y / fy, c) * norm))
}

fn factors(img: &Image, w: usize, h: usize) -> Result<(usize, usize), GuidanceError> {
    if w == 0 || h == 0 || img.width % w != 0 || img.height % h != 0 {
        return Err(GuidanceError::InvalidInput(format!(
            "cannot block-average {}x{} to {}x{}",
            img.width, img.height, w, h
        )));
    }
    Ok((img.width / w, img.height / h))
}
