use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SemanticError;

const MAGIC: &[u8; 4] = b"AEC1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodecConfig {
    pub d_f: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Temperature of the similarity logits in the symmetric cross entropy.
    pub tau: f64,
    /// Loss is recorded every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { d_f: 16, hidden: 256, epochs: 1500, learning_rate: 1e-3, tau: 0.01, eval_every: 50, seed: 0 }
    }
}

/// Dense layer storing its weight transposed (`in x out`) so a batch of row
/// vectors maps as `X * W^T + b`.
#[derive(Clone, Debug, PartialEq)]
struct Layer {
    wt: DMatrix<f32>,
    b: RowDVector<f32>,
}

impl Layer {
    /// `X * W^T + b`. Goes straight to the sgemm kernel so the arithmetic
    /// for each output row is the same whatever the batch size.
    fn forward(&self, x: &DMatrix<f32>) -> DMatrix<f32> {
        let (m, k) = x.shape();
        let n = self.wt.ncols();
        let mut z = DMatrix::<f32>::zeros(m, n);
        for mut row in z.row_iter_mut() {
            row.copy_from(&self.b);
        }
        if m > 0 {
            // Column-major storage: element (i, j) at i + j * rows.
            unsafe {
                matrixmultiply::sgemm(
                    m,
                    k,
                    n,
                    1.0,
                    x.as_ptr(),
                    1,
                    m as isize,
                    self.wt.as_ptr(),
                    1,
                    k as isize,
                    1.0,
                    z.as_mut_ptr(),
                    1,
                    m as isize,
                );
            }
        }
        z
    }
}

/// Autoencoder compressing `d_h`-dimensional text embeddings to `d_f`
/// dimensions: two tanh hidden layers each way, linear code and output.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCodec {
    layers: Vec<Layer>,
    n_encoder: usize,
    /// Loss at each evaluation checkpoint of training.
    pub loss_history: Vec<f64>,
}

/// Rational minimax approximation of `tanh` in single precision, within a
/// few ulp of the exact value. It is branch-free so the loop vectorizes;
/// the libm call dominated decoding time.
#[inline]
fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_671_5e-11,
        2.000_187_9e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347e-4, 1.198_258_4e-6];
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = A[6];
    for a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    let q = ((B[3] * x2 + B[2]) * x2 + B[1]) * x2 + B[0];
    x * p / q
}

fn tanh_in_place(v: &mut [f32]) {
    for x in v {
        *x = tanh_f32(*x);
    }
}

fn is_hidden(layer: usize, n_encoder: usize, n_total: usize) -> bool {
    layer + 1 != n_encoder && layer + 1 != n_total
}

impl EmbeddingCodec {
    pub fn d_h(&self) -> usize {
        self.layers[0].wt.nrows()
    }

    pub fn d_f(&self) -> usize {
        self.layers[self.n_encoder - 1].wt.ncols()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }

    fn run(&self, x: &DMatrix<f32>, range: std::ops::Range<usize>) -> DMatrix<f32> {
        let mut a = x.clone();
        for i in range {
            a = self.layers[i].forward(&a);
            if is_hidden(i, self.n_encoder, self.layers.len()) {
                tanh_in_place(a.as_mut_slice());
            }
        }
        a
    }

    /// Encodes a batch of row vectors.
    pub fn encode_batch(&self, x: &DMatrix<f32>) -> Result<DMatrix<f32>, SemanticError> {
        check_cols(x.ncols(), self.d_h(), "encoder")?;
        Ok(self.run(x, 0..self.n_encoder))
    }

    /// Decodes a batch of row vectors.
    pub fn decode_batch(&self, f: &DMatrix<f32>) -> Result<DMatrix<f32>, SemanticError> {
        check_cols(f.ncols(), self.d_f(), "decoder")?;
        Ok(self.run(f, self.n_encoder..self.layers.len()))
    }

    /// Decoder activations feeding the output layer.
    pub(crate) fn decode_hidden(&self, f: &DMatrix<f32>) -> Result<DMatrix<f32>, SemanticError> {
        check_cols(f.ncols(), self.d_f(), "decoder")?;
        Ok(self.run(f, self.n_encoder..self.layers.len() - 1))
    }

    /// For directions `q_j`, the matrix `W^T q_j` (row-major, hidden x k)
    /// and offsets `b . q_j` of the output layer, so `q_j . D(f)` is an
    /// affine function of the last hidden activations.
    pub(crate) fn output_projection(&self, dirs: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
        let last = &self.layers[self.layers.len() - 1];
        let (hidden, k) = (last.wt.nrows(), dirs.len());
        let mut m = vec![0.0; hidden * k];
        for i in 0..hidden {
            for (j, q) in dirs.iter().enumerate() {
                m[i * k + j] = q.iter().enumerate().map(|(o, v)| last.wt[(i, o)] as f64 * v).sum();
            }
        }
        let c = dirs.iter().map(|q| q.iter().zip(last.b.iter()).map(|(v, b)| v * *b as f64).sum()).collect();
        (m, c)
    }

    pub fn encode(&self, h: &[f64]) -> Result<Vec<f64>, SemanticError> {
        let x = DMatrix::from_row_iterator(1, h.len(), h.iter().map(|&v| v as f32));
        Ok(self.encode_batch(&x)?.iter().map(|&v| v as f64).collect())
    }

    pub fn decode(&self, f: &[f64]) -> Result<Vec<f64>, SemanticError> {
        let x = DMatrix::from_row_iterator(1, f.len(), f.iter().map(|&v| v as f32));
        Ok(self.decode_batch(&x)?.iter().map(|&v| v as f64).collect())
    }

    pub fn reconstruct(&self, h: &[f64]) -> Result<Vec<f64>, SemanticError> {
        self.decode(&self.encode(h)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SemanticError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), SemanticError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n_encoder as u32).to_le_bytes())?;
        for l in &self.layers {
            let (inp, out) = l.wt.shape();
            w.write_all(&(out as u32).to_le_bytes())?;
            w.write_all(&(inp as u32).to_le_bytes())?;
            // Row-major `out x in`, i.e. column-major `in x out`.
            for v in l.wt.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in l.b.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SemanticError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, SemanticError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SemanticError::Format("not a codec checkpoint (bad magic)".into()));
        }
        let n_layers = read_u32(r)? as usize;
        let n_encoder = read_u32(r)? as usize;
        if n_layers < 2 || n_encoder == 0 || n_encoder >= n_layers {
            return Err(SemanticError::Format(format!("bad layer counts {n_layers}/{n_encoder}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let out = read_u32(r)? as usize;
            let inp = read_u32(r)? as usize;
            let w = read_f32s(r, out * inp)?;
            let b = read_f32s(r, out)?;
            layers.push(Layer { wt: DMatrix::from_vec(inp, out, w), b: RowDVector::from_vec(b) });
        }
        for pair in layers.windows(2) {
            if pair[0].wt.ncols() != pair[1].wt.nrows() {
                return Err(SemanticError::Format("consecutive layer shapes do not chain".into()));
            }
        }
        if layers[0].wt.nrows() != layers[n_layers - 1].wt.ncols() {
            return Err(SemanticError::Format("decoder output differs from encoder input".into()));
        }
        Ok(Self { layers, n_encoder, loss_history: Vec::new() })
    }
}

fn check_cols(got: usize, want: usize, what: &str) -> Result<(), SemanticError> {
    if got != want {
        return Err(SemanticError::InvalidInput(format!("{what} expects {want} columns, got {got}")));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, SemanticError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>, SemanticError> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let lr = lr as f32;
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Loss and gradient of `mean_i |a_i - h_i|_1 + SCE(a, h)` with respect to
/// the reconstructions `a`. SCE averages the row-wise and column-wise cross
/// entropies of the logits `cos(a_i, h_j) / tau` against identity targets.
pub fn reconstruction_loss(a: &DMatrix<f32>, h: &DMatrix<f32>, tau: f64) -> (f64, DMatrix<f32>) {
    let n = a.nrows();
    let nf = n as f64;
    let mut grad = DMatrix::<f32>::zeros(n, a.ncols());
    let mut l1 = 0.0;
    for (g, (x, y)) in grad.iter_mut().zip(a.iter().zip(h.iter())) {
        let d = (*x - *y) as f64;
        l1 += d.abs();
        *g = (d.signum() / nf) as f32;
        if d == 0.0 {
            *g = 0.0;
        }
    }
    l1 /= nf;

    let norms_a: Vec<f64> = a.row_iter().map(|r| (r.norm() as f64).max(1e-12)).collect();
    let norms_h: Vec<f64> = h.row_iter().map(|r| (r.norm() as f64).max(1e-12)).collect();
    let mut ah = DMatrix::<f64>::zeros(n, a.ncols());
    for i in 0..n {
        for (j, v) in a.row(i).iter().enumerate() {
            ah[(i, j)] = *v as f64 / norms_a[i];
        }
    }
    let mut hh = DMatrix::<f64>::zeros(n, h.ncols());
    for i in 0..n {
        for (j, v) in h.row(i).iter().enumerate() {
            hh[(i, j)] = *v as f64 / norms_h[i];
        }
    }
    let logits = &ah * hh.transpose() / tau;
    let mut d_logits = DMatrix::<f64>::zeros(n, n);
    let mut sce = 0.0;
    // Rows: which target does reconstruction i match.
    for i in 0..n {
        let row = logits.row(i);
        let m = row.max();
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        sce += 0.5 * (z.ln() + m - logits[(i, i)]) / nf;
        for j in 0..n {
            let p = (logits[(i, j)] - m).exp() / z;
            d_logits[(i, j)] += 0.5 * (p - if i == j { 1.0 } else { 0.0 }) / nf;
        }
    }
    // Columns: which reconstruction does target j match.
    for j in 0..n {
        let col = logits.column(j);
        let m = col.max();
        let z: f64 = col.iter().map(|v| (v - m).exp()).sum();
        sce += 0.5 * (z.ln() + m - logits[(j, j)]) / nf;
        for i in 0..n {
            let p = (logits[(i, j)] - m).exp() / z;
            d_logits[(i, j)] += 0.5 * (p - if i == j { 1.0 } else { 0.0 }) / nf;
        }
    }
    let d_ah = &d_logits * &hh / tau;
    for i in 0..n {
        let ai = ah.row(i);
        let gi = d_ah.row(i);
        let proj = ai.dot(&gi);
        for j in 0..a.ncols() {
            grad[(i, j)] += ((gi[j] - ai[j] * proj) / norms_a[i]) as f32;
        }
    }
    (l1 + sce, grad)
}

/// Trains a codec on the given embeddings with full-batch Adam.
/// Deterministic for a fixed seed.
pub fn train_codec(embeddings: &[Vec<f64>], config: &CodecConfig) -> Result<EmbeddingCodec, SemanticError> {
    if embeddings.len() < 2 {
        return Err(SemanticError::InvalidInput("codec training needs at least 2 embeddings".into()));
    }
    let d_h = embeddings[0].len();
    if d_h == 0 || embeddings.iter().any(|e| e.len() != d_h) {
        return Err(SemanticError::InvalidInput("embeddings must share a nonzero dimension".into()));
    }
    if !(config.tau > 0.0) {
        return Err(SemanticError::InvalidParameter(format!("tau must be positive, got {}", config.tau)));
    }
    let n = embeddings.len();
    let x = DMatrix::from_row_iterator(n, d_h, embeddings.iter().flatten().map(|&v| v as f32));

    let dims = [d_h, config.hidden, config.hidden, config.d_f, config.hidden, config.hidden, d_h];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers: Vec<Layer> = dims
        .windows(2)
        .map(|w| {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let wt = DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound) as f32);
            Layer { wt, b: RowDVector::zeros(w[1]) }
        })
        .collect();
    let n_encoder = 3;
    let n_layers = layers.len();
    let mut opt: Vec<(Adam, Adam)> = layers
        .iter()
        .map(|l| {
            let w = l.wt.len();
            let b = l.b.len();
            (Adam { m: vec![0.0; w], v: vec![0.0; w], t: 0 }, Adam { m: vec![0.0; b], v: vec![0.0; b], t: 0 })
        })
        .collect();

    let mut history = Vec::new();
    let eval_every = config.eval_every.max(1);
    for epoch in 0..=config.epochs {
        // Cosine decay to 1% of the base rate.
        let progress = epoch as f64 / config.epochs.max(1) as f64;
        let lr = config.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        // Forward, keeping activations.
        let mut acts = vec![x.clone()];
        for (i, l) in layers.iter().enumerate() {
            let mut z = l.forward(acts.last().unwrap());
            if is_hidden(i, n_encoder, n_layers) {
                tanh_in_place(z.as_mut_slice());
            }
            acts.push(z);
        }
        let (loss, mut d_a) = reconstruction_loss(acts.last().unwrap(), &x, config.tau);
        if epoch % eval_every == 0 || epoch == config.epochs {
            history.push(loss);
        }
        if epoch == config.epochs {
            break;
        }
        for i in (0..n_layers).rev() {
            if is_hidden(i, n_encoder, n_layers) {
                d_a.zip_apply(&acts[i + 1], |g, a| *g *= 1.0 - a * a);
            }
            let d_wt = acts[i].transpose() * &d_a;
            let d_b: DVector<f32> = d_a.row_sum().transpose();
            let d_prev = if i > 0 { Some(&d_a * layers[i].wt.transpose()) } else { None };
            let (ow, ob) = &mut opt[i];
            ow.step(layers[i].wt.as_mut_slice(), d_wt.as_slice(), lr);
            ob.step(layers[i].b.as_mut_slice(), d_b.as_slice(), lr);
            if let Some(d) = d_prev {
                d_a = d;
            }
        }
    }
    Ok(EmbeddingCodec { layers, n_encoder, loss_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_matches_libm() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f32 * 1e-4;
            worst = worst.max((tanh_f32(x) as f64 - (x as f64).tanh()).abs());
        }
        assert!(worst < 5e-7, "max error {worst}");
        assert_eq!(tanh_f32(100.0), tanh_f32(7.905_311));
        assert!(tanh_f32(f32::MAX) <= 1.0 && tanh_f32(-1e30) >= -1.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0f32..1.0));
        let h = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0f32..1.0));
        let (_, g) = reconstruction_loss(&a, &h, 0.5);
        for idx in 0..a.len() {
            let step = 1e-3f32;
            let mut up = a.clone();
            up[idx] += step;
            let mut down = a.clone();
            down[idx] -= step;
            let num = (reconstruction_loss(&up, &h, 0.5).0 - reconstruction_loss(&down, &h, 0.5).0) / (2.0 * step as f64);
            assert!((num - g[idx] as f64).abs() < 2e-3, "{idx}: {num} vs {}", g[idx]);
        }
    }

    #[test]
    fn rejects_single_embedding() {
        assert!(train_codec(&[vec![1.0, 0.0]], &CodecConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let embs = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.6, 0.8]];
        let cfg = CodecConfig { d_f: 2, hidden: 8, epochs: 20, ..Default::default() };
        let codec = train_codec(&embs, &cfg).unwrap();
        let mut buf = Vec::new();
        codec.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AEC1");
        let back = EmbeddingCodec::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.layers, codec.layers);
        assert_eq!(back.d_h(), 4);
        assert_eq!(back.d_f(), 2);
        buf[0] = b'X';
        assert!(EmbeddingCodec::read_from(&mut buf.as_slice()).is_err());
    }
}
