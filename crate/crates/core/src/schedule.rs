//! Noise schedules. Timesteps are 1-indexed (`t = 1..=T`) and `ᾱ₀ = 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Parameters a linear schedule is built from; this is what checkpoints store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// The standard 1000-step configuration.
    pub const STANDARD: ScheduleConfig = ScheduleConfig {
        steps: 1000,
        beta_start: 1e-4,
        beta_end: 0.02,
    };

    /// Desk-scale 100-step configuration. The β endpoints are the standard ones
    /// scaled by 1000/T so that ᾱ_T still lands near zero.
    pub const DESK: ScheduleConfig = ScheduleConfig {
        steps: 100,
        beta_start: 1e-3,
        beta_end: 0.2,
    };

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::DESK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty beta table".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::OutOfRange {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas[t - 1])
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// ᾱ_t / (1 − ᾱ_t).
    pub fn snr(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        self.check_t(t)?;
        Ok(ab / (1.0 - ab))
    }

    /// β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t); zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        let prev = self.alpha_bar(t - 1)?;
        let cur = self.alpha_bars[t - 1];
        Ok(self.betas[t - 1] * (1.0 - prev) / (1.0 - cur))
    }

    /// Comma-separated table, one row per timestep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha,alpha_bar,posterior_variance,snr\n");
        for t in 1..=self.steps() {
            out.push_str(&format!(
                "{t},{},{},{},{},{}\n",
                self.betas[t - 1],
                self.alphas[t - 1],
                self.alpha_bars[t - 1],
                self.posterior_variance(t).expect("t in range"),
                self.snr(t).expect("t in range"),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_step_table() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.2]);
        assert_abs_diff_eq!(s.alpha_bars()[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bars()[1], 0.72, epsilon = 1e-15);
        assert_eq!(s.posterior_variance(1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            s.posterior_variance(2).unwrap(),
            0.2 * 0.1 / 0.28,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(s.snr(1).unwrap(), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn single_step_boundary() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
        assert_eq!(s.snr(1).unwrap(), 1.0);
    }

    #[test]
    fn standard_schedule_ends_near_zero() {
        let s = ScheduleConfig::STANDARD.build().unwrap();
        assert!(s.alpha_bar(1000).unwrap() < 1e-4);
        let desk = ScheduleConfig::DESK.build().unwrap();
        assert!(desk.alpha_bar(100).unwrap() < 1e-4);
    }

    #[test]
    fn invariants_hold_on_standard_schedule() {
        let s = ScheduleConfig::STANDARD.build().unwrap();
        let mut acc = 1.0;
        for t in 1..=s.steps() {
            acc *= 1.0 - s.betas()[t - 1];
            assert_eq!(acc, s.alpha_bars()[t - 1]);
            let pv = s.posterior_variance(t).unwrap();
            assert!((0.0..=s.beta(t).unwrap()).contains(&pv));
            if t > 1 {
                assert!(s.snr(t).unwrap() < s.snr(t - 1).unwrap());
                assert!(s.alpha_bars()[t - 1] < s.alpha_bars()[t - 2]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            NoiseSchedule::linear(0, 0.1, 0.2),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!(matches!(s.snr(0), Err(Error::OutOfRange { .. })));
        assert!(matches!(s.posterior_variance(3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn csv_rows() {
        let csv = NoiseSchedule::linear(2, 0.1, 0.2).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,0.1,0.9,0.9,0,"));
    }
}
