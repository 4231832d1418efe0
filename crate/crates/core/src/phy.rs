//! 802.11b rate set, bit error models, packet success and frame airtime.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::special::{dqpsk_marcum_difference, gaussian_q};

pub const SIFS_S: f64 = 10e-6;
pub const SLOT_S: f64 = 20e-6;
pub const DIFS_S: f64 = 50e-6;
/// Long preamble plus PLCP header, always sent at 1 Mbps.
pub const PLCP_S: f64 = 192e-6;
pub const BASIC_RATE_BPS: f64 = 1e6;

pub const DATA_PAYLOAD_BYTES: usize = 256;
pub const DATA_MAC_OVERHEAD_BYTES: usize = 28;
pub const ACK_BYTES: usize = 14;
/// Standard 14-byte CTS plus the responder's position and CSI fields.
pub const CTS_BYTES: usize = 38;
pub const MRTS_ENTRY_BYTES: usize = 6;
pub const HELLO_BYTES: usize = 44;

/// Bits entering the packet success probability of a 256-byte data packet:
/// data MPDU plus ACK.
pub const DEFAULT_N_BITS: u32 = ((DATA_PAYLOAD_BYTES + DATA_MAC_OVERHEAD_BYTES + ACK_BYTES) * 8) as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateClass {
    R1,
    R2,
    R5_5,
    R11,
}

impl RateClass {
    pub const ALL: [RateClass; 4] = [RateClass::R1, RateClass::R2, RateClass::R5_5, RateClass::R11];

    pub fn bit_rate(self) -> f64 {
        match self {
            RateClass::R1 => 1e6,
            RateClass::R2 => 2e6,
            RateClass::R5_5 => 5.5e6,
            RateClass::R11 => 11e6,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn ber_model(self) -> BerModel {
        match self {
            RateClass::R1 => BerModel::Dbpsk,
            RateClass::R2 => BerModel::Dqpsk,
            RateClass::R5_5 => BerModel::Cck4,
            RateClass::R11 => BerModel::Cck8,
        }
    }

    pub fn mbps_label(self) -> &'static str {
        match self {
            RateClass::R1 => "1",
            RateClass::R2 => "2",
            RateClass::R5_5 => "5.5",
            RateClass::R11 => "11",
        }
    }
}

impl fmt::Display for RateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RateClass::R1 => "R1",
            RateClass::R2 => "R2",
            RateClass::R5_5 => "R5_5",
            RateClass::R11 => "R11",
        };
        f.write_str(s)
    }
}

impl FromStr for RateClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R1" | "1" => Ok(RateClass::R1),
            "R2" | "2" => Ok(RateClass::R2),
            "R5_5" | "5.5" => Ok(RateClass::R5_5),
            "R11" | "11" => Ok(RateClass::R11),
            other => Err(format!("unknown rate `{other}`")),
        }
    }
}

/// Bit error model tag. `Custom` lets analyses swap in another curve.
#[derive(Debug, Clone, Copy)]
pub enum BerModel {
    Dbpsk,
    Dqpsk,
    /// CCK with 4 bits per symbol (5.5 Mbps).
    Cck4,
    /// CCK with 8 bits per symbol (11 Mbps).
    Cck8,
    Custom(fn(f64) -> f64),
}

impl BerModel {
    pub fn bit_error_prob(self, snr: f64) -> f64 {
        let snr = snr.max(0.0);
        match self {
            BerModel::Dbpsk => 0.5 * (-snr).exp(),
            BerModel::Dqpsk => {
                let a = (2.0 * snr * (1.0 - FRAC_1_SQRT_2)).sqrt();
                let b = (2.0 * snr * (1.0 + FRAC_1_SQRT_2)).sqrt();
                dqpsk_marcum_difference(a, b).clamp(0.0, 0.5)
            }
            BerModel::Cck4 => cck_bit_error(cck_spectrum(CckMode::FourBit), 4, snr),
            BerModel::Cck8 => cck_bit_error(cck_spectrum(CckMode::EightBit), 8, snr),
            BerModel::Custom(f) => f(snr).clamp(0.0, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CckMode {
    FourBit,
    EightBit,
}

/// Squared Euclidean distance and average multiplicity per codeword.
type Spectrum = Vec<(f64, f64)>;

fn cck_codeword(p1: f64, p2: f64, p3: f64, p4: f64) -> [Complex64; 8] {
    let e = |x: f64| Complex64::from_polar(1.0, x);
    [
        e(p1 + p2 + p3 + p4),
        e(p1 + p3 + p4),
        e(p1 + p2 + p4),
        -e(p1 + p4),
        e(p1 + p2 + p3),
        e(p1 + p3),
        -e(p1 + p2),
        e(p1),
    ]
}

fn cck_codebook(mode: CckMode) -> Vec<[Complex64; 8]> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let quarter = [0.0, FRAC_PI_2, PI, 1.5 * PI];
    let mut book = Vec::new();
    match mode {
        CckMode::EightBit => {
            for &p1 in &quarter {
                for &p2 in &quarter {
                    for &p3 in &quarter {
                        for &p4 in &quarter {
                            book.push(cck_codeword(p1, p2, p3, p4));
                        }
                    }
                }
            }
        }
        CckMode::FourBit => {
            for &p1 in &quarter {
                for d2 in [0.0, 1.0] {
                    for d3 in [0.0, 1.0] {
                        book.push(cck_codeword(p1, d2 * PI + FRAC_PI_2, 0.0, d3 * PI));
                    }
                }
            }
        }
    }
    book
}

fn distance_spectrum(book: &[[Complex64; 8]]) -> Spectrum {
    let mut counts: Vec<(f64, f64)> = Vec::new();
    for (i, ci) in book.iter().enumerate() {
        for (j, cj) in book.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = ci.iter().zip(cj).map(|(a, b)| (a - b).norm_sqr()).sum();
            let d2 = (d2 * 1e6).round() / 1e6;
            match counts.iter_mut().find(|(d, _)| *d == d2) {
                Some(entry) => entry.1 += 1.0,
                None => counts.push((d2, 1.0)),
            }
        }
    }
    let n = book.len() as f64;
    counts.iter_mut().for_each(|e| e.1 /= n);
    counts.sort_by(|a, b| a.0.total_cmp(&b.0));
    counts
}

fn cck_spectrum(mode: CckMode) -> &'static Spectrum {
    static FOUR: OnceLock<Spectrum> = OnceLock::new();
    static EIGHT: OnceLock<Spectrum> = OnceLock::new();
    let cell = match mode {
        CckMode::FourBit => &FOUR,
        CckMode::EightBit => &EIGHT,
    };
    cell.get_or_init(|| distance_spectrum(&cck_codebook(mode)))
}

/// Chips per 1 Mbps Barker symbol; `snr` is referenced to that symbol, so a
/// chip carries `snr / 11`.
const BARKER_CHIPS: f64 = 11.0;

fn cck_bit_error(spectrum: &Spectrum, bits: u32, snr: f64) -> f64 {
    let m = f64::from(1u32 << bits);
    let chip_snr = snr / BARKER_CHIPS;
    let union: f64 = spectrum
        .iter()
        .map(|&(d2, mult)| mult * gaussian_q((d2 * chip_snr / 2.0).sqrt()))
        .sum();
    // Saturate the union bound at the guessing error rate (M-1)/M.
    let ceiling = (m - 1.0) / m;
    let symbol_error = -ceiling * (-union / ceiling).exp_m1();
    (symbol_error * (m / 2.0) / (m - 1.0)).clamp(0.0, 0.5)
}

pub fn bit_error_prob(rate: RateClass, snr: f64) -> f64 {
    rate.ber_model().bit_error_prob(snr)
}

/// `ln [1 - Pb]^N`, accurate for tiny `Pb`.
pub fn log_packet_success_prob(rate: RateClass, snr: f64, n_bits: u32) -> f64 {
    f64::from(n_bits) * (-bit_error_prob(rate, snr)).ln_1p()
}

pub fn packet_success_prob(rate: RateClass, snr: f64, n_bits: u32) -> f64 {
    debug_assert!(n_bits >= 1);
    log_packet_success_prob(rate, snr, n_bits).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Hello,
    Mrts,
    Cts,
    Data,
    Ack,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameKind::Hello => "HELLO",
            FrameKind::Mrts => "MRTS",
            FrameKind::Cts => "CTS",
            FrameKind::Data => "DATA",
            FrameKind::Ack => "ACK",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub kind: FrameKind,
    pub payload_bytes: usize,
    pub mac_overhead_bytes: usize,
    pub plcp_seconds: f64,
}

impl FrameSpec {
    pub fn data(payload_bytes: usize) -> Self {
        Self {
            kind: FrameKind::Data,
            payload_bytes,
            mac_overhead_bytes: DATA_MAC_OVERHEAD_BYTES,
            plcp_seconds: PLCP_S,
        }
    }

    pub fn ack() -> Self {
        Self::control(FrameKind::Ack, ACK_BYTES)
    }

    pub fn cts() -> Self {
        Self::control(FrameKind::Cts, CTS_BYTES)
    }

    /// MRTS listing `candidates` relays.
    pub fn mrts(candidates: usize) -> Self {
        Self {
            kind: FrameKind::Mrts,
            payload_bytes: MRTS_ENTRY_BYTES * candidates,
            mac_overhead_bytes: CTS_BYTES,
            plcp_seconds: PLCP_S,
        }
    }

    pub fn hello() -> Self {
        Self::control(FrameKind::Hello, HELLO_BYTES)
    }

    fn control(kind: FrameKind, bytes: usize) -> Self {
        Self {
            kind,
            payload_bytes: 0,
            mac_overhead_bytes: bytes,
            plcp_seconds: PLCP_S,
        }
    }

    pub fn mpdu_bits(&self) -> u32 {
        ((self.payload_bytes + self.mac_overhead_bytes) * 8) as u32
    }

    /// On-air time of this frame alone.
    pub fn airtime(&self, rate: RateClass) -> f64 {
        self.plcp_seconds + f64::from(self.mpdu_bits()) / rate.bit_rate()
    }
}

/// Transmission duration `D_i` of a data frame at `rate`, including SIFS and
/// the 1 Mbps ACK.
pub fn frame_duration(rate: RateClass, spec: &FrameSpec) -> f64 {
    spec.airtime(rate) + SIFS_S + FrameSpec::ack().airtime(RateClass::R1)
}

/// `D_i` for the default 256-byte data packet.
pub fn data_duration(rate: RateClass) -> f64 {
    frame_duration(rate, &FrameSpec::data(DATA_PAYLOAD_BYTES))
}

/// Per-second throughput `P_s,i(snr) / D_i` for each rate.
pub fn rate_throughputs(snr: f64, n_bits: u32) -> [f64; 4] {
    RateClass::ALL.map(|r| packet_success_prob(r, snr, n_bits) / data_duration(r))
}

/// Rate maximizing `P_s,i(snr) / D_i`; ties go to the lower rate.
pub fn best_rate(snr: f64, n_bits: u32) -> (RateClass, f64) {
    let t = rate_throughputs(snr, n_bits);
    let mut best = (RateClass::R1, t[0]);
    for r in &RateClass::ALL[1..] {
        if t[r.index()] > best.1 {
            best = (*r, t[r.index()]);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbpsk_reference_values() {
        assert_eq!(bit_error_prob(RateClass::R1, 0.0), 0.5);
        assert!((bit_error_prob(RateClass::R1, 5.0) - 3.368_973_499_542_733_5e-3).abs() < 1e-15);
    }

    #[test]
    fn all_rates_vanish_at_high_snr() {
        for r in RateClass::ALL {
            assert!(bit_error_prob(r, 1e4) < 1e-300, "{r}");
            let pb = bit_error_prob(r, 0.0);
            assert!((0.0..=0.5).contains(&pb));
        }
    }

    #[test]
    fn cck_spectra_are_as_enumerated() {
        // 16 codewords: 14 neighbours at d^2 = 16 and the antipode at 32.
        let four = cck_spectrum(CckMode::FourBit);
        assert_eq!(four, &vec![(16.0, 14.0), (32.0, 1.0)]);
        let eight = cck_spectrum(CckMode::EightBit);
        let total: f64 = eight.iter().map(|e| e.1).sum();
        assert_eq!(total, 255.0);
        assert_eq!(eight[0], (8.0, 24.0));
    }

    #[test]
    fn success_probability_edges() {
        fn perfect(_: f64) -> f64 {
            0.0
        }
        assert_eq!(BerModel::Custom(perfect).bit_error_prob(3.0), 0.0);
        for r in RateClass::ALL {
            let pb = bit_error_prob(r, 12.0);
            assert!((packet_success_prob(r, 12.0, 1) - (1.0 - pb)).abs() < 1e-15);
        }
        let want = (1.0 - 0.5 * (-10.0f64).exp()).powi(2288);
        assert!((packet_success_prob(RateClass::R1, 10.0, 2288) - want).abs() < 1e-12);
        assert!((want - 0.949).abs() < 5e-4);
    }

    #[test]
    fn log_success_keeps_precision_for_tiny_error_rates() {
        // Pb ~ 1e-13 at snr = 29; 1 - Pb rounds but log1p does not.
        let pb = bit_error_prob(RateClass::R1, 29.0);
        assert!(pb < 1e-12);
        let got = log_packet_success_prob(RateClass::R1, 29.0, 2384);
        let want = -2384.0 * pb * (1.0 + pb / 2.0);
        assert!(((got - want) / want).abs() < 1e-12);
    }

    #[test]
    fn cts_airtime_is_496_symbols() {
        let t = FrameSpec::cts().airtime(RateClass::R1);
        assert!((t - 496e-6).abs() < 1e-15);
        assert!((t * 1e6 - 496.0).abs() < 1e-9);
    }

    #[test]
    fn data_duration_by_hand() {
        // 192 + 2272 + 10 + 192 + 112 microseconds.
        assert!((data_duration(RateClass::R1) - 2778e-6).abs() < 1e-15);
        // 192 + 2272/11 + 10 + 192 + 112.
        assert!((data_duration(RateClass::R11) - (506.0 + 2272.0 / 11.0) * 1e-6).abs() < 1e-15);
        let d: Vec<f64> = RateClass::ALL.iter().map(|r| data_duration(*r)).collect();
        assert!(d.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn default_bit_count() {
        assert_eq!(DEFAULT_N_BITS, 2384);
        assert_eq!(FrameSpec::data(256).mpdu_bits(), 2272);
        assert_eq!(FrameSpec::ack().mpdu_bits(), 112);
    }

    #[test]
    fn low_rate_wins_at_low_snr_and_high_rate_at_high_snr() {
        assert_eq!(best_rate(6.0, DEFAULT_N_BITS).0, RateClass::R1);
        assert_eq!(best_rate(1e3, DEFAULT_N_BITS).0, RateClass::R11);
    }

    #[test]
    fn rate_labels_round_trip() {
        for r in RateClass::ALL {
            assert_eq!(r.to_string().parse::<RateClass>().unwrap(), r);
        }
        assert!("R3".parse::<RateClass>().is_err());
    }
}
