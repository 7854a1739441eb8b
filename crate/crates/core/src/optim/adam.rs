//! Adam moments stored as fixed-width rows, one row per parameter owner.

use std::io::{Read, Write};

use super::config::AdamConfig;
use super::OptimError;

const MAGIC: &[u8; 4] = b"ADM1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Updates applied to each row, for bias correction.
    pub steps: Vec<u32>,
}

impl Moments {
    pub fn new(width: usize, rows: usize) -> Self {
        Self { width, m: vec![0.0; width * rows], v: vec![0.0; width * rows], steps: vec![0; rows] }
    }

    pub fn rows(&self) -> usize {
        self.steps.len()
    }

    /// Advances row `row` with gradient `grad` and writes the signed update
    /// (to be added to the parameters) into `delta`.
    pub fn step(&mut self, row: usize, grad: &[f64], lr: &[f64], cfg: &AdamConfig, delta: &mut [f64]) {
        let w = self.width;
        debug_assert!(grad.len() == w && lr.len() == w && delta.len() == w);
        self.steps[row] += 1;
        let t = self.steps[row] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = &mut self.m[row * w..(row + 1) * w];
        let v = &mut self.v[row * w..(row + 1) * w];
        for i in 0..w {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            delta[i] = -lr[i] * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
    }

    /// Rebuilds the rows after the owners were reordered: `origin[i]` is the
    /// old row of new row `i`, or `None` for a fresh owner.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        let w = self.width;
        let mut out = Moments::new(w, origin.len());
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = *o {
                out.m[i * w..(i + 1) * w].copy_from_slice(&self.m[j * w..(j + 1) * w]);
                out.v[i * w..(i + 1) * w].copy_from_slice(&self.v[j * w..(j + 1) * w]);
                out.steps[i] = self.steps[j];
            }
        }
        *self = out;
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.width as u64).to_le_bytes())?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        for s in &self.steps {
            w.write_all(&s.to_le_bytes())?;
        }
        for x in self.m.iter().chain(&self.v) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self, OptimError> {
        let width = read_u64(r)? as usize;
        let rows = read_u64(r)? as usize;
        let n = width.checked_mul(rows).filter(|n| *n < (1 << 34)).ok_or_else(|| OptimError::Format("moment table too large".into()))?;
        let mut out = Moments::new(width, rows);
        for s in &mut out.steps {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *s = u32::from_le_bytes(b);
        }
        for i in 0..2 * n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let x = f64::from_le_bytes(b);
            if i < n {
                out.m[i] = x;
            } else {
                out.v[i - n] = x;
            }
        }
        Ok(out)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64, OptimError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Moments for every object's Gaussians and for every object transform.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub gaussians: Vec<Moments>,
    pub transforms: Moments,
}

impl OptimizerState {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.gaussians.len() as u64).to_le_bytes())?;
        for m in &self.gaussians {
            m.write_to(w)?;
        }
        self.transforms.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, OptimError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(OptimError::Format("optimizer state has a bad magic number".into()));
        }
        let n = read_u64(r)? as usize;
        if n > 1 << 20 {
            return Err(OptimError::Format("optimizer state lists too many objects".into()));
        }
        let gaussians = (0..n).map(|_| Moments::read_from(r)).collect::<Result<Vec<_>, _>>()?;
        let transforms = Moments::read_from(r)?;
        Ok(Self { gaussians, transforms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = Moments::new(2, 1);
        let mut d = [0.0; 2];
        m.step(0, &[3.0, -0.5], &[0.1, 0.2], &AdamConfig { eps: 0.0, ..Default::default() }, &mut d);
        assert!((d[0] + 0.1).abs() < 1e-12 && (d[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn remap_and_roundtrip() {
        let mut m = Moments::new(1, 2);
        let mut d = [0.0];
        m.step(1, &[1.0], &[1.0], &AdamConfig::default(), &mut d);
        m.remap(&[Some(1), None, Some(1)]);
        assert_eq!(m.steps, vec![1, 0, 1]);
        let s = OptimizerState { gaussians: vec![m.clone()], transforms: Moments::new(8, 1) };
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(OptimizerState::read_from(&mut buf.as_slice()).unwrap(), s);
    }
}
