use nalgebra::DMatrix;

use super::{EmbeddingCodec, EmbeddingProvider, SemanticError};
use crate::raster::Image;

/// One region prompt: object `k`, region `l`, its text and unit embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Subprompt {
    pub object: usize,
    pub region: usize,
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Ordered region prompts plus the softmax temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpromptSet {
    pub entries: Vec<Subprompt>,
    pub tau: f64,
}

impl SubpromptSet {
    pub fn new(entries: Vec<Subprompt>, tau: f64) -> Result<Self, SemanticError> {
        if !(tau > 0.0) {
            return Err(SemanticError::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if entries.is_empty() {
            return Err(SemanticError::InvalidInput("subprompt set is empty".into()));
        }
        let d_h = entries[0].embedding.len();
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| (o.object, o.region) == (e.object, e.region)) {
                return Err(SemanticError::InvalidInput(format!("duplicate subprompt ({}, {})", e.object, e.region)));
            }
            if e.embedding.len() != d_h {
                return Err(SemanticError::InvalidInput("subprompt embeddings differ in size".into()));
            }
            let n = e.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(SemanticError::InvalidInput(format!("embedding of '{}' has norm {n}", e.text)));
            }
        }
        Ok(Self { entries, tau })
    }

    /// Encodes and normalizes `(k, l, text)` triples with a provider.
    pub fn from_provider(
        provider: &dyn EmbeddingProvider,
        items: &[(usize, usize, String)],
        tau: f64,
    ) -> Result<Self, SemanticError> {
        let entries = items
            .iter()
            .map(|(k, l, text)| {
                let mut embedding = provider.encode(text)?;
                super::embed::normalize(&mut embedding)?;
                Ok(Subprompt { object: *k, region: *l, text: text.clone(), embedding })
            })
            .collect::<Result<Vec<_>, SemanticError>>()?;
        Self::new(entries, tau)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d_h(&self) -> usize {
        self.entries[0].embedding.len()
    }

    pub fn position(&self, object: usize, region: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.object == object && e.region == region)
    }

    /// Softmax over `cos(q_j, s) / tau` written into `out`.
    pub fn pixel_probabilities(&self, s: &[f64], out: &mut [f64]) {
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for (o, e) in out.iter_mut().zip(&self.entries) {
            let dot: f64 = e.embedding.iter().zip(s).map(|(a, b)| a * b).sum();
            *o = dot / s_norm / self.tau;
        }
        softmax(out);
    }
}

fn softmax(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Applies the decoder at every pixel of a rendered feature map.
pub fn decode_map(features: &Image, codec: &EmbeddingCodec) -> Result<Image, SemanticError> {
    if features.channels != codec.d_f() {
        return Err(SemanticError::InvalidInput(format!(
            "feature map has {} channels, codec expects {}",
            features.channels,
            codec.d_f()
        )));
    }
    let n = features.width * features.height;
    let f = DMatrix::from_row_iterator(n, features.channels, features.data.iter().map(|&v| v as f32));
    let s = codec.decode_batch(&f)?;
    let mut out = Image::zeros(features.width, features.height, codec.d_h());
    for (dst, row) in out.data.chunks_mut(codec.d_h()).zip(s.row_iter()) {
        for (d, v) in dst.iter_mut().zip(row.iter()) {
            *d = *v as f64;
        }
    }
    Ok(out)
}

/// Per-pixel subprompt probabilities for a decoded semantic map.
pub fn probabilities(semantic: &Image, prompts: &SubpromptSet) -> Result<Image, SemanticError> {
    if semantic.channels != prompts.d_h() {
        return Err(SemanticError::InvalidInput(format!(
            "semantic map has {} channels, prompts have {}",
            semantic.channels,
            prompts.d_h()
        )));
    }
    let k = prompts.len();
    let mut out = Image::zeros(semantic.width, semantic.height, k);
    for (s, p) in semantic.data.chunks(semantic.channels).zip(out.data.chunks_mut(k)) {
        prompts.pixel_probabilities(s, p);
    }
    Ok(out)
}

/// Binary region masks stored as a per-pixel owner label. Labels
/// `0..n_prompts` are subprompts in order; `n_prompts` is the background
/// (null) label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub width: usize,
    pub height: usize,
    pub n_prompts: usize,
    pub labels: Vec<u32>,
}

impl MaskSet {
    pub fn null_label(&self) -> u32 {
        self.n_prompts as u32
    }

    /// Mask `i` (a subprompt index, or `n_prompts` for the background) as
    /// 0/1 values in row-major order.
    pub fn mask(&self, i: usize) -> Vec<u8> {
        self.labels.iter().map(|&l| u8::from(l as usize == i)).collect()
    }

    /// Pixel count per label, background last.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_prompts + 1];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Fraction of all pixels owned by each subprompt.
    pub fn shares(&self) -> Vec<f64> {
        let total = self.labels.len().max(1) as f64;
        self.counts()[..self.n_prompts].iter().map(|&c| c as f64 / total).collect()
    }
}

/// Argmax masks from a probability map. `alpha`, when given, sends pixels
/// with accumulated alpha below `background_alpha` to the null label.
pub fn masks(probs: &Image, alpha: Option<&Image>, background_alpha: f64) -> Result<MaskSet, SemanticError> {
    if let Some(a) = alpha {
        if a.width != probs.width || a.height != probs.height || a.channels != 1 {
            return Err(SemanticError::InvalidInput("alpha map does not match the probability map".into()));
        }
    }
    let k = probs.channels;
    let labels = probs
        .data
        .chunks(k)
        .enumerate()
        .map(|(i, p)| match alpha {
            Some(a) if a.data[i] < background_alpha => k as u32,
            _ => argmax(p) as u32,
        })
        .collect();
    Ok(MaskSet { width: probs.width, height: probs.height, n_prompts: k, labels })
}

/// Decode, probabilities and argmax in one pass that skips background
/// pixels. Since `argmax_j cos(q_j, s) / tau = argmax_j q_j . s` for unit
/// `q_j`, the decoder's output layer is folded into the prompt directions
/// and the `d_h`-dimensional map is never formed. Labels agree with
/// `masks(probabilities(decode_map(F)), alpha)` except on floating-point
/// near-ties.
pub fn masks_from_features(
    features: &Image,
    alpha: &Image,
    codec: &EmbeddingCodec,
    prompts: &SubpromptSet,
    background_alpha: f64,
) -> Result<MaskSet, SemanticError> {
    if features.channels != codec.d_f() || prompts.d_h() != codec.d_h() {
        return Err(SemanticError::InvalidInput("feature, codec and prompt dimensions disagree".into()));
    }
    let k = prompts.len();
    let d_f = features.channels;
    let dirs: Vec<&[f64]> = prompts.entries.iter().map(|e| e.embedding.as_slice()).collect();
    let (proj, offset) = codec.output_projection(&dirs);
    let mut labels = vec![k as u32; features.width * features.height];
    let fg: Vec<usize> = (0..labels.len()).filter(|&i| alpha.data[i] >= background_alpha).collect();
    let mut logits = vec![0.0; k];
    for chunk in fg.chunks(1024) {
        let f = DMatrix::from_row_iterator(
            chunk.len(),
            d_f,
            chunk.iter().flat_map(|&i| features.data[i * d_f..(i + 1) * d_f].iter().map(|&v| v as f32)),
        );
        let hidden = codec.decode_hidden(&f)?;
        for (r, &i) in chunk.iter().enumerate() {
            logits.copy_from_slice(&offset);
            for (c, row) in proj.chunks_exact(k).enumerate() {
                let a = hidden[(r, c)] as f64;
                for (l, m) in logits.iter_mut().zip(row) {
                    *l += a * m;
                }
            }
            labels[i] = argmax(&logits) as u32;
        }
    }
    Ok(MaskSet { width: features.width, height: features.height, n_prompts: k, labels })
}

/// Masks at the guidance resolution: one 0/1 grid per subprompt plus the
/// background grid, row-major `h x w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PooledMasks {
    pub width: usize,
    pub height: usize,
    /// `n_prompts + 1` grids; the last is the background.
    pub masks: Vec<Vec<u8>>,
}

impl PooledMasks {
    /// Single all-ones mask over a grid.
    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, masks: vec![vec![1; width * height]] }
    }
}

/// Average-pools each subprompt mask with kernel = stride = `H / h`,
/// marks every cell with any coverage, then dilates with a `max_kernel`
/// square max pool (stride 1, same-size padding). The background grid is
/// the set of cells no subprompt mask covers after dilation.
pub fn pool_masks(m: &MaskSet, h: usize, w: usize, max_kernel: usize) -> Result<PooledMasks, SemanticError> {
    if h == 0 || w == 0 || m.height % h != 0 || m.width % w != 0 || m.height / h != m.width / w {
        return Err(SemanticError::InvalidInput(format!(
            "{}x{} masks cannot be pooled to {}x{} with a square stride",
            m.height, m.width, h, w
        )));
    }
    if max_kernel % 2 == 0 {
        return Err(SemanticError::InvalidParameter(format!("max-pool kernel {max_kernel} must be odd")));
    }
    let stride = m.height / h;
    let r = (max_kernel / 2) as isize;
    let mut coarse = vec![vec![0u8; h * w]; m.n_prompts];
    for y in 0..m.height {
        for x in 0..m.width {
            let l = m.labels[y * m.width + x] as usize;
            if l < m.n_prompts {
                coarse[l][(y / stride) * w + x / stride] = 1;
            }
        }
    }
    let mut out = Vec::with_capacity(m.n_prompts + 1);
    let mut covered = vec![0u8; h * w];
    for c in &coarse {
        let mut d = vec![0u8; h * w];
        for cy in 0..h as isize {
            for cx in 0..w as isize {
                let mut v = 0;
                'k: for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (cy + dy, cx + dx);
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && c[(yy as usize) * w + xx as usize] == 1 {
                            v = 1;
                            break 'k;
                        }
                    }
                }
                d[cy as usize * w + cx as usize] = v;
            }
        }
        for (cv, dv) in covered.iter_mut().zip(&d) {
            *cv |= dv;
        }
        out.push(d);
    }
    out.push(covered.iter().map(|&c| 1 - c).collect());
    Ok(PooledMasks { width: w, height: h, masks: out })
}
