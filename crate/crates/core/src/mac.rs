//! MRTS/CTS exchange timing, joint rate and relay selection, and DCF backoff.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngExt};
use thiserror::Error;

use crate::mobility::Vec2;
use crate::phy::{self, data_duration, FrameKind, FrameSpec, RateClass};

pub const CW_MIN: u32 = 31;
pub const CW_MAX: u32 = 1023;
pub const RETRY_LIMIT: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MacError {
    #[error("candidate index {index} outside 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("no relay candidate available")]
    NoCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacTiming {
    pub sifs: f64,
    pub slot: f64,
    pub difs: f64,
    pub cts_airtime: f64,
    /// MRTS airtime for a single-candidate list; each extra entry adds
    /// `mrts_entry_airtime`.
    pub mrts_airtime: f64,
    pub mrts_entry_airtime: f64,
}

impl Default for MacTiming {
    fn default() -> Self {
        let base = FrameSpec::mrts(1).airtime(RateClass::R1);
        Self {
            sifs: phy::SIFS_S,
            slot: phy::SLOT_S,
            difs: phy::DIFS_S,
            cts_airtime: FrameSpec::cts().airtime(RateClass::R1),
            mrts_airtime: base,
            mrts_entry_airtime: FrameSpec::mrts(2).airtime(RateClass::R1) - base,
        }
    }
}

impl MacTiming {
    pub fn mrts_airtime_for(&self, candidates: usize) -> f64 {
        self.mrts_airtime + self.mrts_entry_airtime * candidates.saturating_sub(1) as f64
    }
}

/// Lead time from the end of the `l`-th CTS to the start of DATA.
pub fn cts_delay(count: usize, l: usize, t: &MacTiming) -> Result<f64, MacError> {
    if l == 0 || l > count {
        return Err(MacError::IndexOutOfRange { index: l, count });
    }
    Ok((count - l) as f64 * (t.sifs + t.cts_airtime) + t.sifs)
}

/// Age of an MRTS-time measurement when DATA starts.
pub fn rts_csi_age(count: usize, t: &MacTiming) -> f64 {
    count as f64 * (t.sifs + t.cts_airtime) + t.sifs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CsiScheme {
    RtsCsi,
    CtsCsi,
    Ideal,
}

impl CsiScheme {
    pub const ALL: [CsiScheme; 3] = [CsiScheme::RtsCsi, CsiScheme::CtsCsi, CsiScheme::Ideal];
}

impl fmt::Display for CsiScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsiScheme::RtsCsi => "RTS_CSI",
            CsiScheme::CtsCsi => "CTS_CSI",
            CsiScheme::Ideal => "IDEAL",
        })
    }
}

impl FromStr for CsiScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RTS_CSI" | "RTS" => Ok(CsiScheme::RtsCsi),
            "CTS_CSI" | "CTS" => Ok(CsiScheme::CtsCsi),
            "IDEAL" => Ok(CsiScheme::Ideal),
            _ => Err(format!("unknown CSI scheme `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayCandidate {
    pub node_id: usize,
    pub position: Vec2,
    /// Reduction in distance to the destination.
    pub progress: f64,
    pub snr_estimate: f64,
    pub csi_age_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub node_id: usize,
    pub rate: RateClass,
    pub metric: f64,
}

/// Maximize `Z_l * P_s,i(gamma_hat_l) / D_i` over candidates and rates.
/// Ties go to the lower node id, then the lower rate.
pub fn select_rate_relay(cands: &[RelayCandidate], n_bits: u32) -> Result<Selection, MacError> {
    let durations = RateClass::ALL.map(data_duration);
    let mut best: Option<Selection> = None;
    for c in cands {
        for r in RateClass::ALL {
            let m = c.progress * phy::packet_success_prob(r, c.snr_estimate, n_bits) / durations[r.index()];
            let better = match &best {
                None => true,
                Some(b) => m > b.metric || (m == b.metric && (c.node_id, r) < (b.node_id, b.rate)),
            };
            if better {
                best = Some(Selection {
                    node_id: c.node_id,
                    rate: r,
                    metric: m,
                });
            }
        }
    }
    best.ok_or(MacError::NoCandidate)
}

/// Binary exponential backoff state of one station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub cw: u32,
    pub retries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { cw: CW_MIN, retries: 0 }
    }
}

impl Backoff {
    /// Slots to wait after DIFS, uniform on `0..=cw`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(0..=self.cw)
    }

    /// Record a failed attempt; returns false once the retry limit is spent.
    pub fn on_failure(&mut self) -> bool {
        self.retries += 1;
        self.cw = (2 * self.cw + 1).min(CW_MAX);
        self.retries <= RETRY_LIMIT
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Time from the idle instant to the start of transmission.
pub fn dcf_contend<R: Rng + ?Sized>(state: &Backoff, t: &MacTiming, rng: &mut R) -> (u32, f64) {
    let slots = state.draw(rng);
    (slots, t.difs + f64::from(slots) * t.slot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEntry {
    pub start: f64,
    pub end: f64,
    pub kind: FrameKind,
    /// Transmitting node; `None` is the exchange initiator.
    pub from_candidate: Option<usize>,
}

/// Nominal frame schedule of one exchange starting at `start` with
/// `count` candidates, assuming every CTS is sent and DATA goes at `rate`.
pub fn exchange_timeline(
    start: f64,
    count: usize,
    scheme: CsiScheme,
    rate: RateClass,
    t: &MacTiming,
) -> Vec<TimelineEntry> {
    let mut out = Vec::new();
    let mut now = start;
    if scheme != CsiScheme::Ideal && count > 0 {
        let mrts = t.mrts_airtime_for(count);
        out.push(TimelineEntry {
            start: now,
            end: now + mrts,
            kind: FrameKind::Mrts,
            from_candidate: None,
        });
        now += mrts;
        for l in 1..=count {
            now += t.sifs;
            out.push(TimelineEntry {
                start: now,
                end: now + t.cts_airtime,
                kind: FrameKind::Cts,
                from_candidate: Some(l),
            });
            now += t.cts_airtime;
        }
        now += t.sifs;
    }
    let data = FrameSpec::data(phy::DATA_PAYLOAD_BYTES).airtime(rate);
    out.push(TimelineEntry {
        start: now,
        end: now + data,
        kind: FrameKind::Data,
        from_candidate: None,
    });
    now += data + t.sifs;
    out.push(TimelineEntry {
        start: now,
        end: now + FrameSpec::ack().airtime(RateClass::R1),
        kind: FrameKind::Ack,
        from_candidate: Some(0),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::DEFAULT_N_BITS as N;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(id: usize, z: f64, snr_db: f64) -> RelayCandidate {
        RelayCandidate {
            node_id: id,
            position: Vec2::default(),
            progress: z,
            snr_estimate: 10f64.powf(snr_db / 10.0),
            csi_age_s: 0.0,
        }
    }

    #[test]
    fn eq11_delays() {
        let t = MacTiming::default();
        assert!((cts_delay(4, 1, &t).unwrap() - 1528e-6).abs() < 1e-12);
        assert_eq!(cts_delay(4, 4, &t).unwrap(), t.sifs);
        assert_eq!(cts_delay(1, 1, &t).unwrap(), t.sifs);
        assert!(cts_delay(4, 5, &t).is_err());
        assert!(cts_delay(4, 0, &t).is_err());
        assert!((rts_csi_age(4, &t) - 2034e-6).abs() < 1e-12);
    }

    #[test]
    fn mrts_grows_with_candidates() {
        let t = MacTiming::default();
        assert!((t.mrts_airtime_for(4) - FrameSpec::mrts(4).airtime(RateClass::R1)).abs() < 1e-15);
        assert!((t.mrts_entry_airtime - 48e-6).abs() < 1e-15);
    }

    #[test]
    fn selection_brute_force() {
        let c = [cand(1, 200.0, 6.0), cand(2, 100.0, 25.0)];
        let sel = select_rate_relay(&c, N).unwrap();
        let mut best = (0, RateClass::R1, f64::MIN);
        for x in &c {
            for r in RateClass::ALL {
                let m = x.progress * phy::packet_success_prob(r, x.snr_estimate, N) / data_duration(r);
                if m > best.2 {
                    best = (x.node_id, r, m);
                }
            }
        }
        assert_eq!((sel.node_id, sel.rate), (best.0, best.1));
        assert!(select_rate_relay(&[], N).is_err());
    }

    #[test]
    fn dominant_candidate_wins() {
        let c = [cand(7, 50.0, 12.0), cand(3, 80.0, 18.0)];
        assert_eq!(select_rate_relay(&c, N).unwrap().node_id, 3);
        let single = select_rate_relay(&c[..1], N).unwrap();
        assert_eq!(single.node_id, 7);
    }

    #[test]
    fn ties_break_to_lower_id() {
        let c = [cand(9, 100.0, 20.0), cand(4, 100.0, 20.0)];
        assert_eq!(select_rate_relay(&c, N).unwrap().node_id, 4);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let mut b = Backoff::default();
        assert!(b.on_failure());
        assert_eq!(b.cw, 63);
        for _ in 0..5 {
            b.on_failure();
        }
        assert_eq!(b.cw, CW_MAX);
        assert!(b.on_failure());
        assert!(!b.on_failure());
        b.reset();
        assert_eq!(b, Backoff::default());
    }

    #[test]
    fn zero_draw_waits_difs_only() {
        let b = Backoff { cw: 0, retries: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (slots, wait) = dcf_contend(&b, &MacTiming::default(), &mut rng);
        assert_eq!(slots, 0);
        assert_eq!(wait, phy::DIFS_S);
    }

    #[test]
    fn timeline_of_four_candidates() {
        let t = MacTiming::default();
        let tl = exchange_timeline(0.0, 4, CsiScheme::CtsCsi, RateClass::R11, &t);
        assert_eq!(tl.len(), 7);
        let fourth = tl[4];
        assert_eq!(fourth.kind, FrameKind::Cts);
        let data = tl[5];
        assert!((data.start - fourth.end - t.sifs).abs() < 1e-15);
        assert!((data.start - tl[0].end - rts_csi_age(4, &t)).abs() < 1e-12);
        for l in 1..=4 {
            let gap = data.start - tl[l].end;
            assert!((gap - cts_delay(4, l, &t).unwrap()).abs() < 1e-12);
        }
        let ideal = exchange_timeline(0.0, 4, CsiScheme::Ideal, RateClass::R11, &t);
        assert_eq!(ideal[0].kind, FrameKind::Data);
        assert_eq!(ideal[0].start, 0.0);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in CsiScheme::ALL {
            assert_eq!(s.to_string().parse::<CsiScheme>().unwrap(), s);
        }
    }
}
