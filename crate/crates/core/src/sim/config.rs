//! Scenario configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::mac::CsiScheme;
use crate::mobility::Vec2;
use crate::phy;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traffic {
    /// One packet per interval per flow.
    Cbr,
    /// Sources always hold a packet.
    Saturated,
}

impl FromStr for Traffic {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cbr" => Ok(Traffic::Cbr),
            "saturated" => Ok(Traffic::Saturated),
            _ => Err(format!("expected `cbr` or `saturated`, got `{s}`")),
        }
    }
}

impl Traffic {
    fn name(self) -> &'static str {
        match self {
            Traffic::Cbr => "cbr",
            Traffic::Saturated => "saturated",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub node_count: usize,
    pub arena_m: f64,
    pub v_max: f64,
    pub l: usize,
    pub csi_scheme: CsiScheme,
    pub flow_count: usize,
    pub packet_bytes: usize,
    pub packet_interval_s: f64,
    pub hello_interval_s: f64,
    pub sim_end_s: f64,
    /// Extra time after `sim_end_s` for in-flight packets.
    pub drain_s: f64,
    pub seed: u64,
    pub start_window_s: (f64, f64),
    pub traffic: Traffic,
    pub queue_limit: usize,
    pub ttl: u32,
    /// Lower bound on every link's Doppler, so static links still fade.
    pub doppler_floor_hz: f64,
    /// `false` pins `|h| = 1` on every link.
    pub fading: bool,
    pub pilot_snr_db: f64,
    pub pilot_rate_hz: f64,
    pub predictor_order: usize,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub sensitivity_dbm: f64,
    /// Fixed node positions; empty means random waypoint placement.
    pub positions: Vec<Vec2>,
    /// Explicit flows as (source, destination); empty means random pairs.
    pub flows: Vec<(usize, usize)>,
    pub trace: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ScenarioConfig {
    /// Reduced scenario that completes in seconds per run.
    pub fn desk() -> Self {
        Self {
            node_count: 20,
            arena_m: 400.0,
            v_max: 10.0,
            l: 4,
            csi_scheme: CsiScheme::CtsCsi,
            flow_count: 10,
            packet_bytes: phy::DATA_PAYLOAD_BYTES,
            packet_interval_s: 0.25,
            hello_interval_s: 1.5,
            sim_end_s: 300.0,
            drain_s: 5.0,
            seed: 1,
            start_window_s: (10.0, 60.0),
            traffic: Traffic::Cbr,
            queue_limit: 50,
            ttl: 32,
            doppler_floor_hz: 0.0,
            fading: true,
            pilot_snr_db: 30.0,
            pilot_rate_hz: 1e5,
            predictor_order: crate::predictor::CTS_PILOTS,
            tx_power_dbm: 0.0,
            noise_dbm: -102.0,
            sensitivity_dbm: -93.0,
            positions: Vec::new(),
            flows: Vec::new(),
            trace: false,
        }
    }

    /// Full-size scenario: 50 nodes, 500 m, 1000 s.
    pub fn full() -> Self {
        Self {
            node_count: 50,
            arena_m: 500.0,
            sim_end_s: 1000.0,
            start_window_s: (10.0, 200.0),
            ..Self::desk()
        }
    }

    /// Bits entering the packet success probability: data MPDU plus ACK.
    pub fn n_bits(&self) -> u32 {
        ((self.packet_bytes + phy::DATA_MAC_OVERHEAD_BYTES + phy::ACK_BYTES) * 8) as u32
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.node_count < 2 {
            return bad("node_count must be at least 2");
        }
        if !(self.arena_m > 0.0) {
            return bad("arena_m must be positive");
        }
        if !(self.v_max >= 0.0) {
            return bad("v_max must be non-negative");
        }
        if self.l == 0 {
            return bad("L must be at least 1");
        }
        if self.packet_bytes == 0 {
            return bad("packet_bytes must be positive");
        }
        if !(self.packet_interval_s > 0.0 && self.hello_interval_s > 0.0) {
            return bad("intervals must be positive");
        }
        if !(self.sim_end_s > 0.0 && self.drain_s >= 0.0) {
            return bad("sim_end_s must be positive and drain_s non-negative");
        }
        let (lo, hi) = self.start_window_s;
        if !(lo >= 0.0 && hi >= lo) {
            return bad("start window must satisfy 0 <= lo <= hi");
        }
        if self.queue_limit == 0 || self.ttl == 0 {
            return bad("queue_limit and ttl must be positive");
        }
        if !(self.doppler_floor_hz >= 0.0) {
            return bad("doppler_floor_hz must be non-negative");
        }
        if self.predictor_order == 0 || self.predictor_order > crate::predictor::CTS_PILOTS {
            return bad("predictor_order must lie in 1..=50");
        }
        if !(self.pilot_rate_hz > 0.0) {
            return bad("pilot_rate_hz must be positive");
        }
        if !self.positions.is_empty() {
            if self.positions.len() != self.node_count {
                return bad("positions must list every node");
            }
            if self.positions.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
                return bad("positions must be finite");
            }
        }
        if self.flows.is_empty() {
            if 2 * self.flow_count > self.node_count {
                return bad("flow endpoints must be distinct: need 2 * flow_count <= node_count");
            }
        } else {
            let mut used = vec![false; self.node_count];
            for &(s, d) in &self.flows {
                if s >= self.node_count || d >= self.node_count || s == d {
                    return bad("flow endpoints out of range");
                }
                for x in [s, d] {
                    if used[x] {
                        return bad("a node may belong to at most one flow");
                    }
                    used[x] = true;
                }
            }
        }
        Ok(())
    }

    pub fn effective_flow_count(&self) -> usize {
        if self.flows.is_empty() {
            self.flow_count
        } else {
            self.flows.len()
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("node_count", self.node_count.to_string());
        kv("arena_m", fmt_f(self.arena_m));
        kv("v_max", fmt_f(self.v_max));
        kv("L", self.l.to_string());
        kv("csi_scheme", self.csi_scheme.to_string());
        kv("flow_count", self.flow_count.to_string());
        kv("packet_bytes", self.packet_bytes.to_string());
        kv("packet_interval_s", fmt_f(self.packet_interval_s));
        kv("hello_interval_s", fmt_f(self.hello_interval_s));
        kv("sim_end_s", fmt_f(self.sim_end_s));
        kv("drain_s", fmt_f(self.drain_s));
        kv("seed", self.seed.to_string());
        kv(
            "start_window_s",
            format!("{},{}", fmt_f(self.start_window_s.0), fmt_f(self.start_window_s.1)),
        );
        kv("traffic", self.traffic.name().to_string());
        kv("queue_limit", self.queue_limit.to_string());
        kv("ttl", self.ttl.to_string());
        kv("doppler_floor_hz", fmt_f(self.doppler_floor_hz));
        kv("fading", self.fading.to_string());
        kv("pilot_snr_db", fmt_f(self.pilot_snr_db));
        kv("pilot_rate_hz", fmt_f(self.pilot_rate_hz));
        kv("predictor_order", self.predictor_order.to_string());
        kv("tx_power_dbm", fmt_f(self.tx_power_dbm));
        kv("noise_dbm", fmt_f(self.noise_dbm));
        kv("sensitivity_dbm", fmt_f(self.sensitivity_dbm));
        kv(
            "positions",
            self.positions
                .iter()
                .map(|p| format!("{}:{}", fmt_f(p.x), fmt_f(p.y)))
                .collect::<Vec<_>>()
                .join(";"),
        );
        kv(
            "flows",
            self.flows
                .iter()
                .map(|(a, b)| format!("{a}>{b}"))
                .collect::<Vec<_>>()
                .join(";"),
        );
        kv("trace", self.trace.to_string());
        s
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            self.set(k.trim(), v.trim()).map_err(|e| match e {
                SetError::Unknown => ConfigError::UnknownKey {
                    line,
                    key: k.trim().to_string(),
                },
                SetError::Bad(reason) => ConfigError::BadValue {
                    line,
                    key: k.trim().to_string(),
                    reason,
                },
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::desk();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        fn p<T: FromStr>(v: &str) -> Result<T, SetError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| SetError::Bad(e.to_string()))
        }
        match key {
            "node_count" => self.node_count = p(value)?,
            "arena_m" => self.arena_m = p(value)?,
            "v_max" | "vmax" => self.v_max = p(value)?,
            "L" | "l" => self.l = p(value)?,
            "csi_scheme" | "scheme" => self.csi_scheme = value.parse().map_err(SetError::Bad)?,
            "flow_count" => self.flow_count = p(value)?,
            "packet_bytes" => self.packet_bytes = p(value)?,
            "packet_interval_s" => self.packet_interval_s = p(value)?,
            "hello_interval_s" => self.hello_interval_s = p(value)?,
            "sim_end_s" => self.sim_end_s = p(value)?,
            "drain_s" => self.drain_s = p(value)?,
            "seed" => self.seed = p(value)?,
            "start_window_s" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| SetError::Bad("expected `lo,hi`".into()))?;
                self.start_window_s = (p(a.trim())?, p(b.trim())?);
            }
            "traffic" => self.traffic = value.parse().map_err(SetError::Bad)?,
            "queue_limit" => self.queue_limit = p(value)?,
            "ttl" => self.ttl = p(value)?,
            "doppler_floor_hz" => self.doppler_floor_hz = p(value)?,
            "fading" => self.fading = p(value)?,
            "pilot_snr_db" => self.pilot_snr_db = p(value)?,
            "pilot_rate_hz" => self.pilot_rate_hz = p(value)?,
            "predictor_order" => self.predictor_order = p(value)?,
            "tx_power_dbm" => self.tx_power_dbm = p(value)?,
            "noise_dbm" => self.noise_dbm = p(value)?,
            "sensitivity_dbm" => self.sensitivity_dbm = p(value)?,
            "positions" => {
                self.positions = split_list(value)
                    .map(|item| {
                        let (x, y) = item
                            .split_once(':')
                            .ok_or_else(|| SetError::Bad("expected `x:y`".into()))?;
                        Ok(Vec2::new(p(x.trim())?, p(y.trim())?))
                    })
                    .collect::<Result<_, SetError>>()?;
            }
            "flows" => {
                self.flows = split_list(value)
                    .map(|item| {
                        let (s, d) = item
                            .split_once('>')
                            .ok_or_else(|| SetError::Bad("expected `src>dst`".into()))?;
                        Ok((p(s.trim())?, p(d.trim())?))
                    })
                    .collect::<Result<_, SetError>>()?;
            }
            "trace" => self.trace = p(value)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetError {
    Unknown,
    Bad(String),
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(';').map(str::trim).filter(|s| !s.is_empty())
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}
