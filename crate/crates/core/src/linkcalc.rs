//! Link throughput analysis for rate and relay adaptation over Rayleigh
//! fading, with perfect and imperfect CSI.
//!
//! All throughputs are in packets per second. `gamma` is the instantaneous
//! symbol SNR, `gamma_hat` the SNR of the MMSE channel estimate, whose mean is
//! `(1 - nmse) * avg_snr`.

use std::cell::Cell;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::phy::{data_duration, packet_success_prob, RateClass};
use crate::quadrature::{breakpoints, integrate, QuadConfig, QuadError};
use crate::seeding::{derive_seed, Stream};
use crate::special::bessel_i0e;

/// Relative accuracy promised for every reported throughput.
pub const REL_TOL: f64 = 1e-6;

const OUTER: QuadConfig = QuadConfig {
    abs_tol: 1e-10,
    rel_tol: 1e-8,
    max_intervals: 4000,
};
const INNER: QuadConfig = QuadConfig {
    abs_tol: 1e-12,
    rel_tol: 1e-11,
    max_intervals: 4000,
};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LinkCalcError {
    #[error("quadrature failed while evaluating {what}: {source}")]
    Quadrature {
        what: &'static str,
        #[source]
        source: QuadError,
    },
    #[error("conditional pdf is a point mass at gamma = gamma_hat when rho = 1")]
    Degenerate,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

fn quad_err(what: &'static str) -> impl Fn(QuadError) -> LinkCalcError {
    move |source| LinkCalcError::Quadrature { what, source }
}

/// Correlation between true and estimated SNR; `nmse = 1 - rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiQuality {
    rho: f64,
}

impl CsiQuality {
    pub fn from_rho(rho: f64) -> Result<Self, LinkCalcError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(LinkCalcError::InvalidParameter("rho must lie in [0, 1]"));
        }
        Ok(Self { rho })
    }

    pub fn from_nmse(nmse: f64) -> Result<Self, LinkCalcError> {
        if !(0.0..=1.0).contains(&nmse) {
            return Err(LinkCalcError::InvalidParameter("nmse must lie in [0, 1]"));
        }
        Ok(Self { rho: 1.0 - nmse })
    }

    pub fn perfect() -> Self {
        Self { rho: 1.0 }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nmse(&self) -> f64 {
        1.0 - self.rho
    }
}

/// How the CSI estimate is turned into a rate decision and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Best rate under the conditional expectation of the packet success.
    Optimal,
    /// Best rate treating `gamma_hat` as the true SNR, valued at `gamma_hat`.
    Suboptimal,
    /// Rate picked as in `Suboptimal`, valued by what it actually delivers
    /// over the true SNR.
    SuboptimalRealized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fixed(RateClass),
    Ideal,
    Optimal,
    Suboptimal,
    SuboptimalRealized,
}

impl From<Metric> for Method {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Optimal => Method::Optimal,
            Metric::Suboptimal => Method::Suboptimal,
            Metric::SuboptimalRealized => Method::SuboptimalRealized,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Fixed(_) => f.write_str("FIXED"),
            Method::Ideal => f.write_str("IDEAL"),
            Method::Optimal => f.write_str("OPTIMAL"),
            Method::Suboptimal => f.write_str("SUBOPTIMAL"),
            Method::SuboptimalRealized => f.write_str("SUBOPTIMAL_REALIZED"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputResult {
    pub packets_per_second: f64,
    pub method: Method,
    pub quadrature_error: f64,
}

/// SNR values where `rate` crosses packet success 1%, 50% and 99%.
fn waterfall(rate: RateClass, n_bits: u32) -> [f64; 3] {
    [0.01, 0.5, 0.99].map(|target| {
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if packet_success_prob(rate, mid.exp(), n_bits) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    })
}

/// SNR values where the best rate of the perfect-CSI envelope changes.
fn envelope_switches(n_bits: u32) -> Vec<f64> {
    let best = |g: f64| suboptimal_metric(g, n_bits).0;
    let mut out = Vec::new();
    let grid: Vec<f64> = (0..=400).map(|k| 10f64.powf(-1.0 + k as f64 * 0.01)).collect();
    for w in grid.windows(2) {
        if best(w[0]) != best(w[1]) {
            let (mut lo, mut hi) = (w[0], w[1]);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if best(mid) == best(w[0]) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
    }
    out
}

/// Features of the per-rate success curves, used as quadrature breakpoints.
#[derive(Debug, Clone)]
struct Landmarks {
    points: Vec<f64>,
}

impl Landmarks {
    fn new(n_bits: u32) -> Self {
        let mut points: Vec<f64> = RateClass::ALL.iter().flat_map(|r| waterfall(*r, n_bits)).collect();
        points.extend(envelope_switches(n_bits));
        points.sort_by(f64::total_cmp);
        Self { points }
    }

    fn within(&self, lo: f64, hi: f64, extra: impl IntoIterator<Item = f64>) -> Vec<f64> {
        breakpoints(lo, hi, self.points.iter().copied().chain(extra))
    }
}

fn span_factor(l: u32) -> f64 {
    30.0 + 10.0 * f64::from(l + 1).ln()
}

/// Density of the largest of `l` i.i.d. exponentials with the given mean.
pub fn selection_pdf(x: f64, mean: f64, l: u32) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let u = x / mean;
    let cdf = -(-u).exp_m1();
    f64::from(l) / mean * (-u).exp() * cdf.powi(l as i32 - 1)
}

/// Upper bound of `P(X > x)` for the largest of `l` exponentials.
fn selection_tail(x: f64, mean: f64, l: u32) -> f64 {
    f64::from(l) * (-x / mean).exp()
}

fn max_rate_value() -> f64 {
    1.0 / data_duration(RateClass::R11)
}

fn check_avg(avg_snr: f64) -> Result<(), LinkCalcError> {
    if avg_snr > 0.0 && avg_snr.is_finite() {
        Ok(())
    } else {
        Err(LinkCalcError::InvalidParameter("average SNR must be positive and finite"))
    }
}

/// Integrate `g(x) * selection_pdf(x, mean, l)` with a tail bound.
fn integrate_against_selection<F: Fn(f64) -> f64>(
    g: F,
    mean: f64,
    l: u32,
    landmarks: &Landmarks,
    cfg: &QuadConfig,
    what: &'static str,
) -> Result<(f64, f64), LinkCalcError> {
    let hi = mean * span_factor(l);
    let extra = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0].map(|k| k * mean);
    let pts = landmarks.within(0.0, hi, extra);
    let q = integrate(|x| g(x) * selection_pdf(x, mean, l), &pts, cfg).map_err(quad_err(what))?;
    let tail = max_rate_value() * selection_tail(hi, mean, l);
    Ok((q.value, q.abs_error + tail))
}

/// Average throughput of a fixed rate over Rayleigh fading.
pub fn fixed_rate_throughput(
    rate: RateClass,
    avg_snr: f64,
    n_bits: u32,
) -> Result<ThroughputResult, LinkCalcError> {
    check_avg(avg_snr)?;
    let d = data_duration(rate);
    let landmarks = Landmarks::new(n_bits);
    let (v, e) = integrate_against_selection(
        |g| packet_success_prob(rate, g, n_bits) / d,
        avg_snr,
        1,
        &landmarks,
        &OUTER,
        "fixed-rate throughput",
    )?;
    Ok(ThroughputResult {
        packets_per_second: v,
        method: Method::Fixed(rate),
        quadrature_error: e,
    })
}

/// Rate and relay adaptation with perfect CSI over `l` relays.
pub fn ideal_adaptive_throughput(
    avg_snr: f64,
    l: u32,
    n_bits: u32,
) -> Result<ThroughputResult, LinkCalcError> {
    check_avg(avg_snr)?;
    if l == 0 {
        return Err(LinkCalcError::InvalidParameter("relay count must be at least 1"));
    }
    let landmarks = Landmarks::new(n_bits);
    let (v, e) = integrate_against_selection(
        |g| suboptimal_metric(g, n_bits).1,
        avg_snr,
        l,
        &landmarks,
        &OUTER,
        "ideal adaptive throughput",
    )?;
    Ok(ThroughputResult {
        packets_per_second: v,
        method: Method::Ideal,
        quadrature_error: e,
    })
}

/// Density of the true SNR given the estimated SNR.
pub fn conditional_snr_pdf(
    gamma: f64,
    gamma_hat: f64,
    q: CsiQuality,
    avg_snr: f64,
) -> Result<f64, LinkCalcError> {
    if q.rho >= 1.0 {
        return Err(LinkCalcError::Degenerate);
    }
    if gamma < 0.0 || gamma_hat < 0.0 {
        return Ok(0.0);
    }
    let s = avg_snr * (1.0 - q.rho);
    let x = 2.0 * (gamma * gamma_hat).sqrt() / s;
    let d = gamma.sqrt() - gamma_hat.sqrt();
    Ok(bessel_i0e(x) * (-d * d / s).exp() / s)
}

/// Best rate and its throughput treating `gamma_hat` as exact.
/// Ties go to the lower rate.
pub fn suboptimal_metric(gamma_hat: f64, n_bits: u32) -> (RateClass, f64) {
    let mut best = (RateClass::R1, f64::NEG_INFINITY);
    for r in RateClass::ALL {
        let v = packet_success_prob(r, gamma_hat, n_bits) / data_duration(r);
        if v > best.1 {
            best = (r, v);
        }
    }
    best
}

/// Inner integral of the optimal metric for one rate: `(1/D_i) E[P_s,i(gamma) | gamma_hat]`.
fn conditional_rate_value(
    rate: RateClass,
    gamma_hat: f64,
    q: CsiQuality,
    avg_snr: f64,
    n_bits: u32,
    landmarks: &Landmarks,
) -> Result<(f64, f64), LinkCalcError> {
    let d = data_duration(rate);
    if q.rho >= 1.0 {
        return Ok((packet_success_prob(rate, gamma_hat, n_bits) / d, 0.0));
    }
    let s = avg_snr * (1.0 - q.rho);
    let (rs, rh) = (s.sqrt(), gamma_hat.sqrt());
    let lo = (rh - 9.0 * rs).max(0.0).powi(2);
    let hi = (rh + 9.0 * rs).powi(2);
    let extra = (1..=6).flat_map(|j| {
        let step = j as f64 * (s / 2.0).sqrt();
        [(rh - step).max(0.0).powi(2), (rh + step).powi(2)]
    });
    let pts = landmarks.within(lo, hi, extra.chain([gamma_hat]));
    let f = |g: f64| {
        let x = 2.0 * (g * gamma_hat).sqrt() / s;
        let dd = g.sqrt() - rh;
        packet_success_prob(rate, g, n_bits) * bessel_i0e(x) * (-dd * dd / s).exp() / s
    };
    let r = integrate(f, &pts, &INNER).map_err(quad_err("conditional expectation"))?;
    // Mass outside [lo, hi] is below e^-81 of the total.
    Ok((r.value / d, r.abs_error / d))
}

fn per_rate_conditional(
    gamma_hat: f64,
    q: CsiQuality,
    avg_snr: f64,
    n_bits: u32,
    landmarks: &Landmarks,
) -> Result<[(f64, f64); 4], LinkCalcError> {
    let mut out = [(0.0, 0.0); 4];
    for r in RateClass::ALL {
        out[r.index()] = conditional_rate_value(r, gamma_hat, q, avg_snr, n_bits, landmarks)?;
    }
    Ok(out)
}

fn argmax(values: &[(f64, f64); 4]) -> (RateClass, f64, f64) {
    let mut best = (RateClass::R1, values[0].0, values[0].1);
    for r in &RateClass::ALL[1..] {
        let (v, e) = values[r.index()];
        if v > best.1 {
            best = (*r, v, e);
        }
    }
    best
}

/// Best rate and throughput under the conditional expectation.
pub fn optimal_metric(
    gamma_hat: f64,
    q: CsiQuality,
    avg_snr: f64,
    n_bits: u32,
) -> Result<(RateClass, f64), LinkCalcError> {
    check_avg(avg_snr)?;
    let landmarks = Landmarks::new(n_bits);
    let v = per_rate_conditional(gamma_hat.max(0.0), q, avg_snr, n_bits, &landmarks)?;
    let (r, val, _) = argmax(&v);
    Ok((r, val))
}

/// Average throughput with imperfect CSI, weighting the metric by the
/// density of the best of `l` estimates.
pub fn avg_imperfect_throughput(
    avg_snr: f64,
    l: u32,
    q: CsiQuality,
    metric: Metric,
    n_bits: u32,
) -> Result<ThroughputResult, LinkCalcError> {
    check_avg(avg_snr)?;
    if l == 0 {
        return Err(LinkCalcError::InvalidParameter("relay count must be at least 1"));
    }
    let landmarks = Landmarks::new(n_bits);
    let method = Method::from(metric);
    let inner_err = Cell::new(0.0f64);
    let first_err = Cell::new(None::<LinkCalcError>);
    let value_at = |gh: f64| -> f64 {
        let r = match metric {
            Metric::Suboptimal => Ok((suboptimal_metric(gh, n_bits).1, 0.0)),
            Metric::Optimal => per_rate_conditional(gh, q, avg_snr, n_bits, &landmarks).map(|v| {
                let (_, val, e) = argmax(&v);
                (val, e)
            }),
            Metric::SuboptimalRealized => {
                let rate = suboptimal_metric(gh, n_bits).0;
                conditional_rate_value(rate, gh, q, avg_snr, n_bits, &landmarks)
            }
        };
        match r {
            Ok((v, e)) => {
                inner_err.set(inner_err.get().max(e));
                v
            }
            Err(err) => {
                if first_err.get().is_none() {
                    first_err.set(Some(err));
                }
                f64::NAN
            }
        }
    };
    let mean = avg_snr * q.rho;
    let (v, e) = if mean == 0.0 {
        // rho = 0: the estimate is identically zero.
        (value_at(0.0), inner_err.get())
    } else {
        let res = integrate_against_selection(value_at, mean, l, &landmarks, &OUTER, "imperfect-CSI throughput");
        if let Some(err) = first_err.get() {
            return Err(err);
        }
        let (v, e) = res?;
        (v, e + inner_err.get())
    };
    if let Some(err) = first_err.get() {
        return Err(err);
    }
    Ok(ThroughputResult {
        packets_per_second: v,
        method,
        quadrature_error: e,
    })
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub method: Method,
}

impl OracleEstimate {
    /// Distance to `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.std_error == 0.0 {
            if (self.mean - value).abs() <= 1e-12 * value.abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - value).abs() / self.std_error
        }
    }
}

/// Rate decision of the optimal metric as a step function of `gamma_hat`.
#[derive(Debug, Clone)]
pub struct OptimalDecision {
    /// Ascending `(gamma_hat threshold, rate)`: the rate applies from the
    /// threshold up to the next one.
    steps: Vec<(f64, RateClass)>,
}

impl OptimalDecision {
    pub fn build(q: CsiQuality, avg_snr: f64, n_bits: u32, hi: f64) -> Result<Self, LinkCalcError> {
        let landmarks = Landmarks::new(n_bits);
        let best = |gh: f64| -> Result<RateClass, LinkCalcError> {
            Ok(argmax(&per_rate_conditional(gh, q, avg_snr, n_bits, &landmarks)?).0)
        };
        let n = 160;
        let grid: Vec<f64> = (0..=n).map(|k| hi * (k as f64 / n as f64).powi(2)).collect();
        let rates = grid.iter().map(|g| best(*g)).collect::<Result<Vec<_>, _>>()?;
        let mut steps = vec![(0.0, rates[0])];
        for k in 1..grid.len() {
            if rates[k] != rates[k - 1] {
                let (mut lo, mut up) = (grid[k - 1], grid[k]);
                for _ in 0..30 {
                    let mid = 0.5 * (lo + up);
                    if best(mid)? == rates[k - 1] {
                        lo = mid;
                    } else {
                        up = mid;
                    }
                }
                steps.push((0.5 * (lo + up), rates[k]));
            }
        }
        Ok(Self { steps })
    }

    pub fn rate(&self, gamma_hat: f64) -> RateClass {
        let k = self.steps.partition_point(|(t, _)| *t <= gamma_hat);
        self.steps[k.saturating_sub(1)].1
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    (a * std::f64::consts::FRAC_1_SQRT_2, b * std::f64::consts::FRAC_1_SQRT_2)
}

const ORACLE_CHUNK: usize = 8192;

/// Independent Monte-Carlo check of the fixed-rate, ideal and imperfect-CSI
/// averages.
///
/// Each trial draws `l` links with estimate `h_hat ~ CN(0, rho)` and error
/// `e ~ CN(0, nmse)`, so `gamma_hat = avg |h_hat|^2` and
/// `gamma = avg |h_hat + e|^2`. The link with the largest `gamma_hat` is
/// used. `Suboptimal` scores the envelope value at `gamma_hat`; every other
/// method scores the realized `P_s,i(gamma) / D_i` of the rate it picked.
pub fn monte_carlo_oracle(
    avg_snr: f64,
    l: u32,
    q: CsiQuality,
    method: Method,
    n_bits: u32,
    trials: usize,
    seed: u64,
) -> Result<OracleEstimate, LinkCalcError> {
    check_avg(avg_snr)?;
    if l == 0 || trials < 2 {
        return Err(LinkCalcError::InvalidParameter("need l >= 1 and trials >= 2"));
    }
    let decision = match method {
        Method::Optimal if q.rho < 1.0 => {
            let hi = avg_snr * q.rho * span_factor(l);
            Some(OptimalDecision::build(q, avg_snr, n_bits, hi.max(1e-9))?)
        }
        _ => None,
    };
    let (rho, nmse) = (q.rho, q.nmse());
    let durations = RateClass::ALL.map(data_duration);
    let realized = |r: RateClass, g: f64| packet_success_prob(r, g, n_bits) / durations[r.index()];
    let chunks = trials.div_ceil(ORACLE_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Oracle, c as u64));
            let count = ORACLE_CHUNK.min(trials - c * ORACLE_CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (mut gh, mut g) = (f64::NEG_INFINITY, 0.0);
                for _ in 0..l {
                    let (hr, hi) = complex_normal(&mut rng);
                    let (er, ei) = complex_normal(&mut rng);
                    let (hr, hi) = (hr * rho.sqrt(), hi * rho.sqrt());
                    let (er, ei) = (er * nmse.sqrt(), ei * nmse.sqrt());
                    let est = avg_snr * (hr * hr + hi * hi);
                    if est > gh {
                        gh = est;
                        g = avg_snr * ((hr + er).powi(2) + (hi + ei).powi(2));
                    }
                }
                let x = match method {
                    Method::Fixed(r) => realized(r, g),
                    Method::Ideal => suboptimal_metric(g, n_bits).1,
                    Method::Suboptimal => suboptimal_metric(gh, n_bits).1,
                    Method::SuboptimalRealized => realized(suboptimal_metric(gh, n_bits).0, g),
                    Method::Optimal => match &decision {
                        Some(d) => realized(d.rate(gh), g),
                        None => suboptimal_metric(g, n_bits).1,
                    },
                };
                s1 += x;
                s2 += x * x;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(OracleEstimate {
        mean,
        std_error: (var / n).sqrt(),
        trials,
        method,
    })
}

/// One row of curve output.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub avg_snr_db: f64,
    pub l: u32,
    pub nmse: f64,
    pub method: Method,
    pub throughput_pps: f64,
    pub quad_err: f64,
}

impl CurveRow {
    pub const HEADER: &'static str = "avg_snr_db,L,nmse,method,rate,throughput_pps,quad_err";

    pub fn from_result(avg_snr_db: f64, l: u32, nmse: f64, r: &ThroughputResult) -> Self {
        Self {
            avg_snr_db,
            l,
            nmse,
            method: r.method,
            throughput_pps: r.packets_per_second,
            quad_err: r.quadrature_error,
        }
    }

    pub fn csv(&self) -> String {
        let rate = match self.method {
            Method::Fixed(r) => r.to_string(),
            _ => "ADAPTIVE".to_string(),
        };
        format!(
            "{},{},{},{},{},{:.9},{:.3e}",
            self.avg_snr_db, self.l, self.nmse, self.method, rate, self.throughput_pps, self.quad_err
        )
    }
}
