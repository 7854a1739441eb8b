use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GuidanceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w(t) = 1 - alpha_bar(t)`.
    OneMinusAlphaBar,
    Constant,
}

/// Discrete DDPM noise schedule with timesteps `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    pub weighting: Weighting,
    pub t_min: u32,
    pub t_max: u32,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 8.5e-4, 1.2e-2, Weighting::OneMinusAlphaBar, 20, 980).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(
        steps: u32,
        beta_start: f64,
        beta_end: f64,
        weighting: Weighting,
        t_min: u32,
        t_max: u32,
    ) -> Result<Self, GuidanceError> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(GuidanceError::InvalidParameter(format!(
                "need T >= 2 and 0 < beta_start < beta_end < 1, got T={steps}, betas {beta_start}..{beta_end}"
            )));
        }
        if !(1 <= t_min && t_min <= t_max && t_max <= steps) {
            return Err(GuidanceError::InvalidParameter(format!(
                "timestep range [{t_min}, {t_max}] is not inside [1, {steps}]"
            )));
        }
        let n = steps as usize;
        let betas: Vec<f64> =
            (0..n).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64).collect();
        let mut alpha_bars = Vec::with_capacity(n);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars, weighting, t_min, t_max })
    }

    pub fn steps(&self) -> u32 {
        self.betas.len() as u32
    }

    fn index(&self, t: u32) -> Result<usize, GuidanceError> {
        if t == 0 || t > self.steps() {
            return Err(GuidanceError::InvalidInput(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(t as usize - 1)
    }

    pub fn beta(&self, t: u32) -> Result<f64, GuidanceError> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: u32) -> Result<f64, GuidanceError> {
        Ok(self.alpha_bars[self.index(t)?])
    }

    pub fn weight(&self, t: u32) -> Result<f64, GuidanceError> {
        let a = self.alpha_bar(t)?;
        Ok(match self.weighting {
            Weighting::OneMinusAlphaBar => 1.0 - a,
            Weighting::Constant => 1.0,
        })
    }

    /// Uniform timestep in `[t_min, t_max]`.
    pub fn sample_t<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.t_min..=self.t_max)
    }
}

/// `x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps`.
pub fn add_noise(schedule: &NoiseSchedule, x0: &[f64], t: u32, eps: &[f64]) -> Result<Vec<f64>, GuidanceError> {
    if x0.len() != eps.len() {
        return Err(GuidanceError::InvalidInput(format!("noise has {} values, x0 has {}", eps.len(), x0.len())));
    }
    let a = schedule.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_shape() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1).unwrap(), 8.5e-4);
        assert!((s.beta(1000).unwrap() - 1.2e-2).abs() < 1e-15);
        for t in 1..1000 {
            assert!(s.beta(t + 1).unwrap() > s.beta(t).unwrap());
            assert!(s.alpha_bar(t + 1).unwrap() < s.alpha_bar(t).unwrap());
            assert!(s.weight(t).unwrap() > 0.0);
        }
        assert!(s.alpha_bar(0).is_err() && s.alpha_bar(1001).is_err());
    }

    #[test]
    fn zero_noise_scales_input() {
        let s = NoiseSchedule::default();
        let a = s.alpha_bar(300).unwrap();
        assert_eq!(add_noise(&s, &[2.0], 300, &[0.0]).unwrap(), vec![a.sqrt() * 2.0]);
        let x1 = add_noise(&s, &[0.25], 1, &[0.5]).unwrap()[0];
        assert!((x1 - 0.25).abs() < 0.02);
    }

    #[test]
    fn bad_parameters() {
        assert!(NoiseSchedule::linear(1000, 0.02, 0.01, Weighting::Constant, 1, 1000).is_err());
        assert!(NoiseSchedule::linear(1000, 1e-4, 0.02, Weighting::Constant, 0, 1000).is_err());
        assert!(NoiseSchedule::linear(1000, 1e-4, 0.02, Weighting::Constant, 10, 1001).is_err());
    }
}
