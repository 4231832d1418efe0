//! Flat Rayleigh fading, two-ray path loss and link SNR.
//!
//! Fading is a sum of sinusoids evaluated lazily as a function of time, so
//! the event engine only pays for samples at frame boundaries. Each
//! quadrature carries `OSCILLATORS` unit-amplitude oscillators whose Doppler
//! shifts follow equally spaced arrival angles with a random common offset.
//! One realization has time-average power exactly one and the ensemble
//! autocorrelation is `J0(2 pi fd tau)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::special::bessel_j0;

/// Oscillators per quadrature component.
pub const OSCILLATORS: usize = 64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Unit-power complex fading sample `h(t)`.
pub type ComplexGain = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("path loss parameter `{0}` must be strictly positive")]
    InvalidParameter(&'static str),
}

/// One sinusoid. `doppler_factor` is the direction cosine of its arrival
/// angle, so the instantaneous frequency is `doppler_factor * fd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillator {
    pub amplitude: f64,
    pub doppler_factor: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    doppler_hz: f64,
    in_phase: Vec<Oscillator>,
    quadrature: Vec<Oscillator>,
    seed: u64,
}

impl FadingProcess {
    pub fn new(doppler_hz: f64, seed: u64) -> Self {
        assert!(doppler_hz >= 0.0, "Doppler frequency must be non-negative");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = OSCILLATORS as f64;
        let amplitude = (1.0 / m).sqrt();
        let mut bank = |direction: fn(f64) -> f64| -> Vec<Oscillator> {
            let offset = rng.random_range(-PI..PI);
            (1..=OSCILLATORS)
                .map(|n| {
                    let alpha = (2.0 * PI * n as f64 - PI + offset) / (4.0 * m);
                    Oscillator {
                        amplitude,
                        doppler_factor: direction(alpha),
                        phase: rng.random_range(-PI..PI),
                    }
                })
                .collect()
        };
        let in_phase = bank(f64::cos);
        let quadrature = bank(f64::sin);
        Self {
            doppler_hz,
            in_phase,
            quadrature,
            seed,
        }
    }

    pub fn doppler_hz(&self) -> f64 {
        self.doppler_hz
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn oscillators(&self) -> impl Iterator<Item = &Oscillator> {
        self.in_phase.iter().chain(self.quadrature.iter())
    }

    /// Change the Doppler frequency from time `at` onward without a jump in
    /// `h`: phases are shifted so both parameterizations agree at `at`.
    pub fn retune(&mut self, doppler_hz: f64, at: f64) {
        assert!(doppler_hz >= 0.0);
        let shift = 2.0 * PI * (self.doppler_hz - doppler_hz) * at;
        for osc in self.in_phase.iter_mut().chain(self.quadrature.iter_mut()) {
            osc.phase = wrap_phase(osc.phase + shift * osc.doppler_factor);
        }
        self.doppler_hz = doppler_hz;
    }

    /// `h(t)`; a pure function of the seed, the Doppler history and `t`.
    pub fn sample_gain(&self, t: f64) -> ComplexGain {
        let w = 2.0 * PI * self.doppler_hz * t;
        let component = |bank: &[Oscillator]| -> f64 {
            bank.iter()
                .map(|o| o.amplitude * cos_reduced(wrap_phase(w * o.doppler_factor + o.phase)))
                .sum()
        };
        Complex64::new(component(&self.in_phase), component(&self.quadrature))
    }
}

/// Reduce to [-π, π] for |x| < 2^50.
fn wrap_phase(x: f64) -> f64 {
    const TAU: f64 = 2.0 * PI;
    // Adding 1.5 * 2^52 rounds to the nearest integer without a libm call.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let k = (x * (1.0 / TAU) + SHIFT) - SHIFT;
    x - k * TAU
}

/// Taylor coefficients (-1)^k / (2k)! for k = 1..=14.
const COS_TAYLOR: [f64; 14] = {
    let mut c = [0.0; 14];
    let mut fact = 1.0;
    let mut k = 1;
    while k <= 14 {
        fact *= ((2 * k - 1) * (2 * k)) as f64;
        c[k - 1] = if k % 2 == 1 { -1.0 / fact } else { 1.0 / fact };
        k += 1;
    }
    c
};

/// `cos` on [-π, π]; truncation error below π^30/30! ≈ 3e-18.
fn cos_reduced(x: f64) -> f64 {
    let z = x * x;
    let mut acc = 0.0f64;
    for c in COS_TAYLOR.iter().rev() {
        acc = acc * z + c;
    }
    acc * z + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossParams {
    pub tx_power_w: f64,
    pub antenna_height_m: f64,
    pub antenna_gain: f64,
    pub carrier_hz: f64,
    pub noise_w: f64,
}

impl Default for PathLossParams {
    /// 1 mW transmit power, 1.5 m antennas, unity gain, 2.4 GHz, -102 dBm noise.
    fn default() -> Self {
        Self {
            tx_power_w: 1e-3,
            antenna_height_m: 1.5,
            antenna_gain: 1.0,
            carrier_hz: 2.4e9,
            noise_w: dbm_to_watts(-102.0),
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let checks = [
            (self.tx_power_w, "tx_power_w"),
            (self.antenna_height_m, "antenna_height_m"),
            (self.antenna_gain, "antenna_gain"),
            (self.carrier_hz, "carrier_hz"),
            (self.noise_w, "noise_w"),
        ];
        for (v, name) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ChannelError::InvalidParameter(name));
            }
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Distance where the two-ray model takes over from free space.
    pub fn crossover_m(&self) -> f64 {
        4.0 * PI * self.antenna_height_m * self.antenna_height_m / self.wavelength_m()
    }

    pub fn doppler_hz(&self, relative_speed: f64) -> f64 {
        relative_speed.abs() * self.carrier_hz / SPEED_OF_LIGHT
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn friis_gain(d: f64, p: &PathLossParams) -> f64 {
    let lambda = p.wavelength_m();
    let g = p.antenna_gain;
    g * g * lambda * lambda / (4.0 * PI * d).powi(2)
}

fn two_ray_gain(d: f64, p: &PathLossParams) -> f64 {
    let g = p.antenna_gain;
    let h2 = p.antenna_height_m * p.antenna_height_m;
    g * g * h2 * h2 / d.powi(4)
}

/// Large-scale linear power gain at distance `d`.
pub fn path_gain(d: f64, p: &PathLossParams) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    Ok(if d < p.crossover_m() {
        friis_gain(d, p)
    } else {
        two_ray_gain(d, p)
    })
}

/// Instantaneous and average SNR of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSnr {
    pub value: f64,
    pub avg: f64,
}

pub fn instantaneous_sinr(
    path_gain: f64,
    h: ComplexGain,
    p: &PathLossParams,
    interference_w: f64,
) -> LinkSnr {
    debug_assert!(interference_w >= 0.0);
    let avg = p.tx_power_w * path_gain / (p.noise_w + interference_w);
    LinkSnr {
        value: avg * h.norm_sqr(),
        avg,
    }
}

/// Clarke reference autocorrelation `J0(2 pi fd tau)`.
pub fn jakes_autocorr(fd: f64, tau: f64) -> f64 {
    bessel_j0(2.0 * PI * fd * tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_cosine_matches_std() {
        let mut worst: f64 = 0.0;
        for k in -200_000..=200_000 {
            let x = k as f64 * 7.3e-3;
            worst = worst.max((cos_reduced(wrap_phase(x)) - x.cos()).abs());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn zero_doppler_freezes_the_channel() {
        let f = FadingProcess::new(0.0, 11);
        let h0 = f.sample_gain(0.0);
        for t in [0.5, 3.0, 1000.0] {
            assert_eq!(f.sample_gain(t), h0);
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let a = FadingProcess::new(80.0, 5);
        let b = FadingProcess::new(80.0, 5);
        assert_eq!(a.sample_gain(5.0), b.sample_gain(5.0));
        assert_eq!(a.sample_gain(5.0), a.sample_gain(5.0));
        assert_ne!(a.sample_gain(5.0), FadingProcess::new(80.0, 6).sample_gain(5.0));
    }

    #[test]
    fn unit_power_over_a_long_record() {
        let f = FadingProcess::new(100.0, 3);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|k| f.sample_gain(k as f64 * 1e-4).norm_sqr()).sum::<f64>() / n as f64;
        assert!((0.98..=1.02).contains(&mean), "mean power {mean}");
    }

    #[test]
    fn retune_is_continuous() {
        let mut f = FadingProcess::new(50.0, 9);
        let before = f.sample_gain(2.0);
        f.retune(130.0, 2.0);
        let after = f.sample_gain(2.0);
        assert!((before - after).norm() < 1e-9);
        assert_eq!(f.doppler_hz(), 130.0);
    }

    #[test]
    fn received_power_at_300_m_is_near_sensitivity() {
        let p = PathLossParams::default();
        let g = path_gain(300.0, &p).unwrap();
        let dbm = watts_to_dbm(p.tx_power_w * g);
        assert!((dbm - -93.0).abs() < 1.5, "{dbm}");
        assert!((dbm - -92.04).abs() < 0.01, "{dbm}");
    }

    #[test]
    fn branches_meet_at_crossover() {
        let p = PathLossParams::default();
        let dc = p.crossover_m();
        let free = linear_to_db(friis_gain(dc, &p));
        let ray = linear_to_db(two_ray_gain(dc, &p));
        assert!((free - ray).abs() < 0.5);
    }

    #[test]
    fn fourth_power_law_beyond_crossover() {
        let p = PathLossParams::default();
        let d = 1.5 * p.crossover_m();
        let ratio = path_gain(2.0 * d, &p).unwrap() / path_gain(d, &p).unwrap();
        assert!((ratio - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        let p = PathLossParams::default();
        assert!(matches!(path_gain(0.0, &p), Err(ChannelError::NonPositiveDistance(_))));
        assert!(path_gain(-3.0, &p).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PathLossParams {
            noise_w: 0.0,
            ..Default::default()
        };
        assert_eq!(p.validate(), Err(ChannelError::InvalidParameter("noise_w")));
        assert!(PathLossParams::default().validate().is_ok());
    }

    #[test]
    fn sinr_arithmetic() {
        let p = PathLossParams::default();
        let g = path_gain(100.0, &p).unwrap();
        let unit = instantaneous_sinr(g, Complex64::new(1.0, 0.0), &p, 0.0);
        assert_eq!(unit.value, unit.avg);
        let jammed = instantaneous_sinr(g, Complex64::new(1.0, 0.0), &p, p.noise_w);
        assert!((jammed.value - 0.5 * unit.value).abs() < 1e-9 * unit.value);

        // 100 m is below the 226 m crossover: free-space branch by hand.
        let lambda = 299_792_458.0 / 2.4e9;
        let gain = lambda * lambda / (4.0 * PI * 100.0f64).powi(2);
        let noise = 10f64.powf(-10.2) * 1e-3;
        let expected = 1e-3 * gain * 0.5 / noise;
        let h = Complex64::new(0.5f64.sqrt(), 0.0);
        let got = instantaneous_sinr(g, h, &p, 0.0).value;
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn path_gain_is_monotone() {
        let p = PathLossParams::default();
        let mut prev = f64::INFINITY;
        for k in 1..2000 {
            let g = path_gain(k as f64 * 0.5, &p).unwrap();
            assert!(g <= prev);
            prev = g;
        }
    }

    #[test]
    fn jakes_reference_points() {
        assert_eq!(jakes_autocorr(0.0, 1.0), 1.0);
        assert_eq!(jakes_autocorr(50.0, 0.0), 1.0);
        let null_tau = 2.404_825_557_695_773 / (2.0 * PI * 100.0);
        assert!(jakes_autocorr(100.0, null_tau).abs() < 1e-12);
        assert!((jakes_autocorr(100.0, 1e-3) - 0.9037).abs() < 1e-4);
    }

    #[test]
    fn doppler_from_speed() {
        let p = PathLossParams::default();
        assert!((p.doppler_hz(20.0) - 160.1).abs() < 0.1);
    }
}
