//! Per-run metrics, CSV rows and cross-seed aggregation.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::mac::CsiScheme;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowMetrics {
    pub src: usize,
    pub dst: usize,
    pub start_s: f64,
    pub sent: u64,
    pub delivered: u64,
    pub delay_sum_s: f64,
    pub hop_sum: u64,
    pub drops_nocand: u64,
    pub drops_retry: u64,
    pub drops_queue: u64,
    pub drops_ttl: u64,
    pub unfinished: u64,
}

impl FlowMetrics {
    pub fn dropped(&self) -> u64 {
        self.drops_nocand + self.drops_retry + self.drops_queue + self.drops_ttl
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub v_max: f64,
    pub l: usize,
    pub scheme: CsiScheme,
    /// Network-wide delivered packets per second: the sum over flows of
    /// each flow's deliveries divided by its active time.
    pub throughput_pps: f64,
    pub delay_s: f64,
    pub pdr: f64,
    pub hops: f64,
    pub sent: u64,
    pub delivered: u64,
    pub drops_nocand: u64,
    pub drops_retry: u64,
    pub drops_queue: u64,
    pub drops_ttl: u64,
    pub unfinished: u64,
    pub flows: Vec<FlowMetrics>,
    /// Head-of-line forwarding decisions (each consults the neighbor table).
    pub forwarding_decisions: u64,
    pub data_attempts: u64,
    pub data_successes: u64,
    /// Sum over DATA attempts of DATA airtime + SIFS + ACK airtime.
    pub data_attempt_airtime_s: f64,
    /// Sum over exchanges of MRTS, CTS slot and gap airtime.
    pub exchange_overhead_s: f64,
    pub events: u64,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "seed,vmax,L,scheme,throughput_pps,delay_s,pdr,hops,drops_nocand,drops_retry,drops_queue,drops_ttl,unfinished,sent,delivered";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.4},{},{},{},{},{},{},{}",
            self.seed,
            self.v_max,
            self.l,
            self.scheme,
            self.throughput_pps,
            self.delay_s,
            self.pdr,
            self.hops,
            self.drops_nocand,
            self.drops_retry,
            self.drops_queue,
            self.drops_ttl,
            self.unfinished,
            self.sent,
            self.delivered
        )
    }

    /// Every generated packet is delivered, dropped or still in flight.
    pub fn is_conserved(&self) -> bool {
        self.flows
            .iter()
            .all(|f| f.sent == f.delivered + f.dropped() + f.unfinished)
    }
}

/// Mean and two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
}

impl Summary {
    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &Summary) -> bool {
        self.lo() <= other.hi() && other.lo() <= self.hi()
    }
}

/// `None` for fewer than two samples.
pub fn summarize(samples: &[f64]) -> Option<Summary> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    Some(Summary {
        n,
        mean,
        std_dev: sd,
        half_width: t * sd / nf.sqrt(),
    })
}

/// Cross-seed summary of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub v_max: f64,
    pub l: usize,
    pub scheme: CsiScheme,
    pub throughput: Summary,
    pub delay: Summary,
    pub pdr: Summary,
    pub hops: Summary,
}

impl Aggregate {
    pub const CSV_HEADER: &'static str = "vmax,L,scheme,runs,throughput_pps,throughput_ci95,delay_s,delay_ci95,pdr,pdr_ci95,hops,hops_ci95";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            self.v_max,
            self.l,
            self.scheme,
            self.throughput.n,
            self.throughput.mean,
            self.throughput.half_width,
            self.delay.mean,
            self.delay.half_width,
            self.pdr.mean,
            self.pdr.half_width,
            self.hops.mean,
            self.hops.half_width
        )
    }
}

/// Aggregate runs of one cell; all runs must share `(v_max, l, scheme)`.
pub fn aggregate(runs: &[RunMetrics]) -> Option<Aggregate> {
    let first = runs.first()?;
    let col = |f: fn(&RunMetrics) -> f64| -> Option<Summary> {
        summarize(&runs.iter().map(f).collect::<Vec<_>>())
    };
    Some(Aggregate {
        v_max: first.v_max,
        l: first.l,
        scheme: first.scheme,
        throughput: col(|r| r.throughput_pps)?,
        delay: col(|r| r.delay_s)?,
        pdr: col(|r| r.pdr)?,
        hops: col(|r| r.hops)?,
    })
}
