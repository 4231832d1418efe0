//! Linear MMSE prediction of the fading gain from noisy CTS pilots.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::channel::{db_to_linear, jakes_autocorr, ComplexGain};

/// Pilots carried by one CTS: 496 symbols with a pilot every 10.
pub const CTS_PILOTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PredictorError {
    #[error("filter order must be at least 1")]
    ZeroOrder,
    #[error("horizon must be non-negative")]
    NegativeHorizon,
    #[error("pilot rate {pilot_rate_hz} Hz does not exceed twice the Doppler {doppler_hz} Hz")]
    Undersampled { pilot_rate_hz: f64, doppler_hz: f64 },
    #[error("pilot block holds {have} samples but the filter needs {need}")]
    ShortBlock { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    pub pilot_rate_hz: f64,
    pub pilot_snr_db: f64,
    pub order: usize,
    /// Lead from the last pilot to the predicted instant.
    pub horizon_s: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            pilot_rate_hz: 1e5,
            pilot_snr_db: 30.0,
            order: CTS_PILOTS,
            horizon_s: 0.0,
        }
    }
}

impl PredictorConfig {
    pub fn with_horizon(mut self, horizon_s: f64) -> Self {
        self.horizon_s = horizon_s;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn validate(&self, fd: f64) -> Result<(), PredictorError> {
        if self.order == 0 {
            return Err(PredictorError::ZeroOrder);
        }
        if self.horizon_s < 0.0 {
            return Err(PredictorError::NegativeHorizon);
        }
        if self.pilot_rate_hz <= 2.0 * fd {
            return Err(PredictorError::Undersampled {
                pilot_rate_hz: self.pilot_rate_hz,
                doppler_hz: fd,
            });
        }
        Ok(())
    }

    fn pilot_snr(&self) -> f64 {
        db_to_linear(self.pilot_snr_db)
    }
}

/// Pilot observations `y_k = h(t_k) + n_k`, oldest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PilotBlock {
    pub observations: Vec<ComplexGain>,
    pub timestamps: Vec<f64>,
}

impl PilotBlock {
    /// Pilot instants of a frame ending at `end`: the last pilot sits at the
    /// end, earlier ones at the pilot spacing before it.
    pub fn timestamps_ending_at(end: f64, count: usize, pilot_rate_hz: f64) -> Vec<f64> {
        (0..count)
            .map(|k| end - (count - 1 - k) as f64 / pilot_rate_hz)
            .collect()
    }
}

/// Wiener filter taps; `coeffs[k]` weighs the pilot `k` steps before the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub coeffs: Vec<f64>,
    pub mse: f64,
}

fn normal_equations(fd: f64, cfg: &PredictorConfig) -> (DMatrix<f64>, DVector<f64>) {
    let p = cfg.order;
    let dt = 1.0 / cfg.pilot_rate_hz;
    let noise = 1.0 / cfg.pilot_snr();
    let r = DMatrix::from_fn(p, p, |j, k| {
        let lag = (j as f64 - k as f64).abs() * dt;
        jakes_autocorr(fd, lag) + if j == k { noise } else { 0.0 }
    });
    let rhs = DVector::from_fn(p, |k, _| jakes_autocorr(fd, cfg.horizon_s + k as f64 * dt));
    (r, rhs)
}

fn solve(fd: f64, cfg: &PredictorConfig) -> (DVector<f64>, f64) {
    let (r, rhs) = normal_equations(fd, cfg);
    // R is a correlation matrix plus a positive diagonal, so Cholesky holds
    // whenever the pilot SNR is finite; LU is the fallback for round-off.
    let w = match r.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => r.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
    };
    let mse = (1.0 - rhs.dot(&w)).clamp(0.0, 1.0);
    (w, mse)
}

pub fn design_predictor(fd: f64, cfg: &PredictorConfig) -> Result<Predictor, PredictorError> {
    cfg.validate(fd)?;
    let (w, mse) = solve(fd, cfg);
    Ok(Predictor {
        coeffs: w.iter().copied().collect(),
        mse,
    })
}

/// Normalized MSE of the designed predictor.
pub fn analytic_mse(fd: f64, cfg: &PredictorConfig) -> Result<f64, PredictorError> {
    cfg.validate(fd)?;
    Ok(solve(fd, cfg).1)
}

/// NMSE of using a single sample `tau` old, scaled by its correlation.
pub fn outdated_mse(fd: f64, tau: f64) -> f64 {
    let r = jakes_autocorr(fd, tau);
    1.0 - r * r
}

/// Predicted gain and the SNR estimate `avg_snr |h_hat|^2`.
pub fn predict_gain(
    block: &PilotBlock,
    predictor: &Predictor,
    avg_snr: f64,
) -> Result<(ComplexGain, f64), PredictorError> {
    let p = predictor.coeffs.len();
    let n = block.observations.len();
    if n < p {
        return Err(PredictorError::ShortBlock { have: n, need: p });
    }
    let h: Complex64 = predictor
        .coeffs
        .iter()
        .enumerate()
        .map(|(k, w)| block.observations[n - 1 - k] * *w)
        .sum();
    Ok((h, avg_snr * h.norm_sqr()))
}

/// Memo of designed predictors keyed by exact `(fd, horizon)`.
#[derive(Debug, Default)]
pub struct PredictorCache {
    base: PredictorConfig,
    map: HashMap<(u64, u64), Arc<Predictor>>,
}

impl PredictorCache {
    pub fn new(base: PredictorConfig) -> Self {
        Self {
            base,
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, fd: f64, horizon_s: f64) -> Result<Arc<Predictor>, PredictorError> {
        let key = (fd.to_bits(), horizon_s.to_bits());
        if let Some(p) = self.map.get(&key) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(design_predictor(fd, &self.base.with_horizon(horizon_s))?);
        if self.map.len() > 4096 {
            self.map.clear();
        }
        self.map.insert(key, Arc::clone(&p));
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_channel_averages_pilots() {
        let cfg = PredictorConfig::default().with_horizon(1e-3);
        let p = design_predictor(0.0, &cfg).unwrap();
        let snr = 1000.0;
        let want = 1.0 / (1.0 + 50.0 * snr);
        assert!((p.mse - want).abs() < 1e-12, "{}", p.mse);
        let w0 = p.coeffs[0];
        assert!(p.coeffs.iter().all(|w| (w - w0).abs() < 1e-12));
    }

    #[test]
    fn noiseless_zero_lead_is_exact() {
        let cfg = PredictorConfig {
            pilot_snr_db: 200.0,
            order: 1,
            ..PredictorConfig::default()
        };
        assert!(analytic_mse(100.0, &cfg).unwrap() < 1e-12);
    }

    #[test]
    fn prediction_beats_outdated_sample() {
        let cfg = PredictorConfig::default().with_horizon(1.5e-3);
        let m = analytic_mse(100.0, &cfg).unwrap();
        assert!(m < outdated_mse(100.0, 1.5e-3), "{m}");
    }

    #[test]
    fn outdated_mse_edges() {
        assert_eq!(outdated_mse(100.0, 0.0), 0.0);
        let null = 2.404_825_557_695_773 / (2.0 * std::f64::consts::PI * 100.0);
        assert!((outdated_mse(100.0, null) - 1.0).abs() < 1e-12);
        assert!(outdated_mse(100.0, 2e-3) > outdated_mse(100.0, 1.5e-3));
    }

    #[test]
    fn zero_block_gives_zero() {
        let p = design_predictor(50.0, &PredictorConfig::default()).unwrap();
        let block = PilotBlock {
            observations: vec![Complex64::new(0.0, 0.0); CTS_PILOTS],
            timestamps: PilotBlock::timestamps_ending_at(1.0, CTS_PILOTS, 1e5),
        };
        let (h, g) = predict_gain(&block, &p, 30.0).unwrap();
        assert_eq!(h, Complex64::new(0.0, 0.0));
        assert_eq!(g, 0.0);
    }

    #[test]
    fn constant_noiseless_channel_is_recovered() {
        let cfg = PredictorConfig {
            pilot_snr_db: 120.0,
            ..PredictorConfig::default().with_horizon(2e-3)
        };
        let p = design_predictor(0.0, &cfg).unwrap();
        let c = Complex64::new(0.6, -0.3);
        let block = PilotBlock {
            observations: vec![c; CTS_PILOTS],
            timestamps: PilotBlock::timestamps_ending_at(0.0, CTS_PILOTS, 1e5),
        };
        let (h, _) = predict_gain(&block, &p, 1.0).unwrap();
        assert!((h - c).norm() < 1e-9);
    }

    #[test]
    fn validation() {
        let cfg = PredictorConfig::default();
        assert_eq!(cfg.with_order(0).validate(10.0), Err(PredictorError::ZeroOrder));
        assert!(matches!(cfg.validate(6e4), Err(PredictorError::Undersampled { .. })));
        assert_eq!(cfg.with_horizon(-1.0).validate(1.0), Err(PredictorError::NegativeHorizon));
        let p = design_predictor(10.0, &cfg).unwrap();
        let short = PilotBlock {
            observations: vec![Complex64::new(1.0, 0.0); 3],
            timestamps: vec![0.0; 3],
        };
        assert!(matches!(predict_gain(&short, &p, 1.0), Err(PredictorError::ShortBlock { .. })));
    }

    #[test]
    fn pilot_timestamps_end_at_frame_end() {
        let t = PilotBlock::timestamps_ending_at(1.0, 50, 1e5);
        assert_eq!(t.len(), 50);
        assert_eq!(t[49], 1.0);
        assert!((t[0] - (1.0 - 49e-5)).abs() < 1e-15);
    }

    #[test]
    fn cache_reuses_designs() {
        let mut c = PredictorCache::new(PredictorConfig::default());
        let a = c.get(40.0, 1e-3).unwrap();
        let b = c.get(40.0, 1e-3).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        c.get(41.0, 1e-3).unwrap();
        assert_eq!(c.len(), 2);
    }
}
