//! Network state and event handlers for one simulation run.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ScenarioConfig, Traffic};
use super::engine::{to_ns, to_secs, EventQueue, SimTime};
use super::metrics::{FlowMetrics, RunMetrics};
use crate::channel::{dbm_to_watts, linear_to_db, path_gain, FadingProcess, PathLossParams};
use crate::gpsr::{on_local_maximum, DropCause, NeighborTable};
use crate::mac::{select_rate_relay, Backoff, CsiScheme, MacTiming, RelayCandidate};
use crate::mobility::{RwpParams, RwpState, Trajectory, Vec2};
use crate::phy::{self, FrameKind, FrameSpec, RateClass};
use crate::predictor::{predict_gain, PilotBlock, PredictorCache, PredictorConfig};
use crate::seeding::{derive_seed, stream_rng, Stream};

/// Carrier sense reacts this long after a transmission starts.
const CCA_DELAY: SimTime = 4_000;
/// Packets a saturated source keeps queued.
const SATURATED_BACKLOG: usize = 2;
/// Retuned fading segments kept per link for queries slightly in the past.
const SEGMENT_HISTORY: usize = 4;
/// Below noise by this much a link contributes only its mean power.
const FADING_FLOOR_DB: f64 = 30.0;

pub type TxId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: usize,
    pub src: usize,
    pub dst: usize,
    pub created: SimTime,
    pub hops: u32,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Hello { position: Vec2 },
    Mrts { candidates: Vec<usize> },
    Cts { initiator: usize, slot: usize, position: Vec2, measured_sinr: f64 },
    Data { to: usize, packet: Packet },
    Ack { to: usize, packet_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Frame {
    src: usize,
    rate: RateClass,
    bits: u32,
    airtime: SimTime,
    nav_until: SimTime,
    body: Body,
}

impl Frame {
    fn kind(&self) -> FrameKind {
        match self.body {
            Body::Hello { .. } => FrameKind::Hello,
            Body::Mrts { .. } => FrameKind::Mrts,
            Body::Cts { .. } => FrameKind::Cts,
            Body::Data { .. } => FrameKind::Data,
            Body::Ack { .. } => FrameKind::Ack,
        }
    }

    fn peer(&self) -> Option<usize> {
        match &self.body {
            Body::Cts { initiator, .. } => Some(*initiator),
            Body::Data { to, .. } | Body::Ack { to, .. } => Some(*to),
            _ => None,
        }
    }
}

/// A transmission in the air with its received power at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTx {
    pub src: usize,
    /// Instantaneous received power (W) per node, fading frozen at start.
    pub rx_power: Vec<f64>,
    /// Fading-free received power (W) per node.
    pub mean_power: Vec<f64>,
    pub end: SimTime,
}

/// Shared channel occupancy.
#[derive(Debug, Clone, Default)]
pub struct Medium {
    active: BTreeMap<TxId, ActiveTx>,
    next_id: TxId,
}

impl Medium {
    pub fn insert(&mut self, tx: ActiveTx) -> TxId {
        self.next_id += 1;
        self.active.insert(self.next_id, tx);
        self.next_id
    }

    pub fn remove(&mut self, id: TxId) -> Option<ActiveTx> {
        self.active.remove(&id)
    }

    pub fn get(&self, id: TxId) -> Option<&ActiveTx> {
        self.active.get(&id)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Power at `node` from every transmission except `exclude` and the
    /// node's own.
    pub fn interference_at(&self, node: usize, exclude: Option<TxId>) -> f64 {
        self.active
            .iter()
            .filter(|(id, tx)| Some(**id) != exclude && tx.src != node)
            .map(|(_, tx)| tx.rx_power[node])
            .sum()
    }
}

/// Frame-level success draw: `u` uniform on [0, 1).
pub fn reception_decision(rate: RateClass, sinr: f64, bits: u32, u: f64) -> bool {
    u < phy::packet_success_prob(rate, sinr, bits)
}

#[derive(Debug, Clone)]
struct LinkFading {
    segments: Vec<(SimTime, FadingProcess)>,
}

impl LinkFading {
    fn gain(&self, t: SimTime) -> Complex64 {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .unwrap_or(&self.segments[0]);
        seg.1.sample_gain(to_secs(t))
    }

    fn retune(&mut self, fd: f64, at: SimTime) {
        let last = &self.segments.last().expect("at least one segment").1;
        if last.doppler_hz() == fd {
            return;
        }
        let mut next = last.clone();
        next.retune(fd, to_secs(at));
        self.segments.push((at, next));
        if self.segments.len() > SEGMENT_HISTORY {
            self.segments.remove(0);
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct RxLock {
    tx: TxId,
    signal: f64,
    max_interference: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum MacState {
    Idle,
    Contend,
    SendingHello,
    SendingMrts { started: SimTime },
    AwaitCts { started: SimTime, heard: Vec<RelayCandidate>, data_start: SimTime, mrts_end: SimTime },
    SendingData { packet_id: u64 },
    AwaitAck { packet_id: u64 },
}

impl MacState {
    fn in_exchange(&self) -> bool {
        !matches!(self, MacState::Idle | MacState::Contend)
    }
}

struct Node {
    traj: Trajectory,
    rng_mobility: ChaCha8Rng,
    rng_backoff: ChaCha8Rng,
    rng_rx: ChaCha8Rng,
    rng_pilot: ChaCha8Rng,
    rng_hello: ChaCha8Rng,
    table: NeighborTable,
    queue: VecDeque<Packet>,
    hello_pending: bool,
    accepted: HashSet<u64>,
    backoff: Backoff,
    slots_left: u32,
    count_start: Option<SimTime>,
    backoff_token: u64,
    timer_token: u64,
    state: MacState,
    transmitting: Option<TxId>,
    cs_count: u32,
    nav_until: SimTime,
    nav_owner: Option<usize>,
    busy: bool,
    idle_since: SimTime,
    lock: Option<RxLock>,
}

#[derive(Debug)]
enum Event {
    TxEnd(TxId),
    CsRise(TxId),
    Backoff { node: usize, token: u64 },
    Respond { node: usize, frame: Frame },
    Decide { node: usize, token: u64 },
    AckTimeout { node: usize, token: u64 },
    NavEnd { node: usize },
    Generate { flow: usize },
    Hello { node: usize },
    Mobility { node: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Delivered,
    Dropped(DropCause),
}

#[derive(Debug, Clone)]
struct Fate {
    flow: usize,
    live: u32,
    outcome: Option<Outcome>,
    last_drop: Option<DropCause>,
}

#[derive(Debug, Clone)]
struct FlowState {
    src: usize,
    dst: usize,
    start: SimTime,
    sent: u64,
    delivered: u64,
    delay_sum: f64,
    hop_sum: u64,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// One line per MAC event when tracing is on.
    pub trace: Vec<String>,
    /// Contention-initiated transmissions that began while the node's own
    /// carrier sense or NAV read busy.
    pub cs_violations: u64,
}

pub const TRACE_HEADER: &str = "time_s,node,event,frame,peer,snr_db,busy";

pub struct World {
    cfg: ScenarioConfig,
    n_bits: u32,
    timing: MacTiming,
    pl: PathLossParams,
    sens_w: f64,
    /// Links whose mean power is this far under the noise skip fading.
    fading_floor_w: f64,
    slot: SimTime,
    sifs: SimTime,
    difs: SimTime,
    ack_air: SimTime,
    cts_air: SimTime,
    q: EventQueue<Event>,
    nodes: Vec<Node>,
    medium: Medium,
    frames: BTreeMap<TxId, Frame>,
    cs_marks: BTreeMap<TxId, Vec<usize>>,
    links: Vec<Option<LinkFading>>,
    flows: Vec<FlowState>,
    fates: HashMap<u64, Fate>,
    next_packet: u64,
    predictors: PredictorCache,
    pilot_cfg: PredictorConfig,
    end_gen: SimTime,
    end_run: SimTime,
    forwarding_decisions: u64,
    data_attempts: u64,
    data_successes: u64,
    data_attempt_airtime: f64,
    exchange_overhead: f64,
    cs_violations: u64,
    trace: Vec<String>,
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let n = cfg.node_count;
        let seed = cfg.seed;
        let timing = MacTiming::default();
        let pl = PathLossParams {
            tx_power_w: dbm_to_watts(cfg.tx_power_dbm),
            noise_w: dbm_to_watts(cfg.noise_dbm),
            ..PathLossParams::default()
        };
        let rwp = RwpParams::new(cfg.arena_m, cfg.v_max);
        let nodes = (0..n)
            .map(|i| {
                let mut rng_mobility = stream_rng(seed, Stream::Mobility, i as u64);
                let state = match cfg.positions.get(i) {
                    Some(p) => RwpState::fixed(*p),
                    None => RwpState::initial(&rwp, &mut rng_mobility),
                };
                Node {
                    traj: Trajectory { params: rwp, state },
                    rng_mobility,
                    rng_backoff: stream_rng(seed, Stream::Backoff, i as u64),
                    rng_rx: stream_rng(seed, Stream::Reception, i as u64),
                    rng_pilot: stream_rng(seed, Stream::Pilots, i as u64),
                    rng_hello: stream_rng(seed, Stream::Hello, i as u64),
                    table: NeighborTable::default(),
                    queue: VecDeque::new(),
                    hello_pending: false,
                    accepted: HashSet::new(),
                    backoff: Backoff::default(),
                    slots_left: 0,
                    count_start: None,
                    backoff_token: 0,
                    timer_token: 0,
                    state: MacState::Idle,
                    transmitting: None,
                    cs_count: 0,
                    nav_until: 0,
                    nav_owner: None,
                    busy: false,
                    idle_since: 0,
                    lock: None,
                }
            })
            .collect();
        let pilot_cfg = PredictorConfig {
            pilot_rate_hz: cfg.pilot_rate_hz,
            pilot_snr_db: cfg.pilot_snr_db,
            order: cfg.predictor_order,
            horizon_s: 0.0,
        };
        let end_gen = to_ns(cfg.sim_end_s);
        let end_run = to_ns(cfg.sim_end_s + cfg.drain_s);
        let mut w = Self {
            n_bits: cfg.n_bits(),
            sens_w: dbm_to_watts(cfg.sensitivity_dbm),
            fading_floor_w: dbm_to_watts(cfg.noise_dbm - FADING_FLOOR_DB),
            slot: to_ns(timing.slot),
            sifs: to_ns(timing.sifs),
            difs: to_ns(timing.difs),
            ack_air: to_ns(FrameSpec::ack().airtime(RateClass::R1)),
            cts_air: to_ns(timing.cts_airtime),
            timing,
            pl,
            q: EventQueue::default(),
            nodes,
            medium: Medium::default(),
            frames: BTreeMap::new(),
            cs_marks: BTreeMap::new(),
            links: vec![None; n * n],
            flows: Vec::new(),
            fates: HashMap::new(),
            next_packet: 0,
            predictors: PredictorCache::new(pilot_cfg),
            pilot_cfg,
            end_gen,
            end_run,
            forwarding_decisions: 0,
            data_attempts: 0,
            data_successes: 0,
            data_attempt_airtime: 0.0,
            exchange_overhead: 0.0,
            cs_violations: 0,
            trace: Vec::new(),
            cfg,
        };
        w.setup_flows();
        w.setup_timers();
        w
    }

    fn setup_flows(&mut self) {
        let mut rng = stream_rng(self.cfg.seed, Stream::Traffic, 0);
        let pairs: Vec<(usize, usize)> = if self.cfg.flows.is_empty() {
            let mut ids: Vec<usize> = (0..self.cfg.node_count).collect();
            ids.shuffle(&mut rng);
            (0..self.cfg.flow_count).map(|f| (ids[2 * f], ids[2 * f + 1])).collect()
        } else {
            self.cfg.flows.clone()
        };
        let (lo, hi) = self.cfg.start_window_s;
        for (f, (src, dst)) in pairs.into_iter().enumerate() {
            let start = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let start = to_ns(start);
            self.flows.push(FlowState {
                src,
                dst,
                start,
                sent: 0,
                delivered: 0,
                delay_sum: 0.0,
                hop_sum: 0,
            });
            if start < self.end_gen {
                self.q.schedule(start, Event::Generate { flow: f });
            }
        }
    }

    fn setup_timers(&mut self) {
        let hello = self.cfg.hello_interval_s;
        for i in 0..self.nodes.len() {
            let first = self.nodes[i].rng_hello.random_range(0.0..hello);
            self.q.schedule(to_ns(first), Event::Hello { node: i });
            let end = self.nodes[i].traj.state.phase_end;
            if end.is_finite() && to_ns(end) < self.end_run {
                self.q.schedule(to_ns(end), Event::Mobility { node: i });
            }
        }
    }

    pub fn run(mut self) -> RunOutput {
        while let Some((_, ev)) = self.q.pop_until(self.end_run) {
            self.dispatch(ev);
        }
        self.finish()
    }

    fn now(&self) -> SimTime {
        self.q.now()
    }

    fn now_s(&self) -> f64 {
        to_secs(self.q.now())
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::TxEnd(id) => self.on_tx_end(id),
            Event::CsRise(id) => self.on_cs_rise(id),
            Event::Backoff { node, token } => {
                if self.nodes[node].backoff_token == token && self.nodes[node].state == MacState::Contend {
                    self.nodes[node].count_start = None;
                    self.nodes[node].slots_left = 0;
                    self.transmit_head(node);
                }
            }
            Event::Respond { node, frame } => {
                if self.nodes[node].transmitting.is_none() {
                    self.start_tx(node, frame, false);
                } else {
                    self.log(node, "SKIP", FrameKind::Cts, None, None);
                }
            }
            Event::Decide { node, token } => {
                if self.nodes[node].timer_token == token {
                    self.decide(node);
                }
            }
            Event::AckTimeout { node, token } => {
                if self.nodes[node].timer_token == token {
                    if let MacState::AwaitAck { .. } = self.nodes[node].state {
                        self.attempt_failed(node);
                    }
                }
            }
            Event::NavEnd { node } => self.update_medium(node),
            Event::Generate { flow } => self.on_generate(flow),
            Event::Hello { node } => self.on_hello_timer(node),
            Event::Mobility { node } => self.on_mobility(node),
        }
    }

    // ---- geometry and channel -------------------------------------------

    fn pos(&self, i: usize, t: SimTime) -> Vec2 {
        self.nodes[i].traj.position_at(to_secs(t))
    }

    fn doppler(&self, i: usize, j: usize) -> f64 {
        let v = self.nodes[i].traj.state.velocity() - self.nodes[j].traj.state.velocity();
        self.pl.doppler_hz(v.norm()).max(self.cfg.doppler_floor_hz)
    }

    fn link_index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.nodes.len() + b
    }

    fn link_gain(&mut self, i: usize, j: usize, t: SimTime) -> Complex64 {
        if !self.cfg.fading {
            return Complex64::new(1.0, 0.0);
        }
        let k = self.link_index(i, j);
        if self.links[k].is_none() {
            let fd = self.doppler(i, j);
            let p = FadingProcess::new(fd, derive_seed(self.cfg.seed, Stream::Fading, k as u64));
            self.links[k] = Some(LinkFading {
                segments: vec![(0, p)],
            });
        }
        self.links[k].as_ref().expect("link just created").gain(t)
    }

    fn mean_power(&self, i: usize, j: usize, t: SimTime) -> f64 {
        let d = self.pos(i, t).dist(self.pos(j, t)).max(1.0);
        self.pl.tx_power_w * path_gain(d, &self.pl).expect("distance is positive")
    }

    fn on_mobility(&mut self, node: usize) {
        let now = self.now();
        let n = &mut self.nodes[node];
        // The event time is the phase end rounded to the nanosecond.
        let t = if to_ns(n.traj.state.phase_end) <= now {
            to_secs(now).max(n.traj.state.phase_end)
        } else {
            to_secs(now)
        };
        if n.traj.catch_up(t, &mut n.rng_mobility) {
            for j in 0..self.nodes.len() {
                if j == node {
                    continue;
                }
                let k = self.link_index(node, j);
                if self.links[k].is_some() {
                    let fd = self.doppler(node, j);
                    self.links[k].as_mut().expect("checked").retune(fd, now);
                }
            }
        }
        let end = self.nodes[node].traj.state.phase_end;
        if end.is_finite() && to_ns(end) < self.end_run {
            self.q.schedule(to_ns(end).max(now), Event::Mobility { node });
        }
    }

    // ---- medium -----------------------------------------------------------

    fn start_tx(&mut self, src: usize, frame: Frame, contended: bool) -> TxId {
        let now = self.now();
        if contended && self.nodes[src].busy {
            self.cs_violations += 1;
        }
        let n = self.nodes.len();
        let mut rx_power = vec![0.0; n];
        let mut mean = vec![0.0; n];
        for j in 0..n {
            if j == src {
                continue;
            }
            mean[j] = self.mean_power(src, j, now);
            rx_power[j] = if mean[j] < self.fading_floor_w {
                mean[j]
            } else {
                mean[j] * self.link_gain(src, j, now).norm_sqr()
            };
        }
        let end = now + frame.airtime;
        let id = self.medium.insert(ActiveTx {
            src,
            rx_power: rx_power.clone(),
            mean_power: mean,
            end,
        });
        self.log(src, "TX", frame.kind(), frame.peer(), None);
        self.frames.insert(id, frame);
        self.nodes[src].transmitting = Some(id);
        self.nodes[src].lock = None;
        for j in 0..n {
            if j == src {
                continue;
            }
            let total = self.medium.interference_at(j, None);
            let node = &mut self.nodes[j];
            if let Some(lock) = node.lock.as_mut() {
                lock.max_interference = lock.max_interference.max(total - lock.signal);
            } else if node.transmitting.is_none() && rx_power[j] >= self.sens_w {
                node.lock = Some(RxLock {
                    tx: id,
                    signal: rx_power[j],
                    max_interference: (total - rx_power[j]).max(0.0),
                });
            }
        }
        self.q.schedule(now + CCA_DELAY.min(self.frames[&id].airtime / 2), Event::CsRise(id));
        self.q.schedule(end, Event::TxEnd(id));
        self.update_medium(src);
        id
    }

    fn on_cs_rise(&mut self, id: TxId) {
        let Some(tx) = self.medium.get(id) else { return };
        let marked: Vec<usize> = (0..self.nodes.len())
            .filter(|&j| j != tx.src && tx.rx_power[j] >= self.sens_w)
            .collect();
        for &j in &marked {
            self.nodes[j].cs_count += 1;
            self.update_medium(j);
        }
        self.cs_marks.insert(id, marked);
    }

    fn on_tx_end(&mut self, id: TxId) {
        let now = self.now();
        let tx = self.medium.remove(id).expect("ending transmission is active");
        let frame = self.frames.remove(&id).expect("frame recorded");
        let marked = self.cs_marks.remove(&id).unwrap_or_default();
        for &j in &marked {
            self.nodes[j].cs_count -= 1;
        }
        self.nodes[tx.src].transmitting = None;
        let mut receptions = Vec::new();
        for j in 0..self.nodes.len() {
            let Some(lock) = self.nodes[j].lock else { continue };
            if lock.tx != id {
                continue;
            }
            self.nodes[j].lock = None;
            let sinr = lock.signal / (self.pl.noise_w + lock.max_interference);
            let u: f64 = self.nodes[j].rng_rx.random();
            let ok = reception_decision(frame.rate, sinr, frame.bits, u);
            let mean_sinr = tx.mean_power[j] / (self.pl.noise_w + lock.max_interference);
            receptions.push((j, sinr, mean_sinr, ok));
        }
        self.update_medium(tx.src);
        for &j in &marked {
            self.update_medium(j);
        }
        self.on_sent(tx.src, &frame, now);
        for (j, sinr, mean_sinr, ok) in receptions {
            self.log(j, if ok { "RX_OK" } else { "RX_FAIL" }, frame.kind(), Some(frame.src), Some(sinr));
            if ok {
                self.on_receive(j, &frame, sinr, mean_sinr, &tx);
            }
        }
    }

    fn update_medium(&mut self, i: usize) {
        let now = self.now();
        let n = &self.nodes[i];
        let busy = n.transmitting.is_some() || n.cs_count > 0 || n.nav_until > now;
        if busy == n.busy {
            return;
        }
        self.nodes[i].busy = busy;
        if busy {
            self.freeze(i);
        } else {
            self.nodes[i].idle_since = now;
            self.resume(i);
        }
    }

    fn set_nav(&mut self, i: usize, until: SimTime, owner: usize, reset: bool) {
        let now = self.now();
        let n = &mut self.nodes[i];
        if reset && n.nav_owner == Some(owner) {
            n.nav_until = until;
        } else if until > n.nav_until {
            n.nav_until = until;
            n.nav_owner = Some(owner);
        }
        if n.nav_until > now {
            let t = n.nav_until;
            self.q.schedule(t, Event::NavEnd { node: i });
        }
        self.update_medium(i);
    }

    // ---- DCF ---------------------------------------------------------------

    fn freeze(&mut self, i: usize) {
        let now = self.now();
        let slot = self.slot;
        let n = &mut self.nodes[i];
        if n.state != MacState::Contend {
            return;
        }
        if let Some(start) = n.count_start.take() {
            if now > start {
                let used = ((now - start) / slot) as u32;
                n.slots_left -= used.min(n.slots_left);
            }
            n.backoff_token += 1;
        }
    }

    fn resume(&mut self, i: usize) {
        let now = self.now();
        let (difs, slot) = (self.difs, self.slot);
        let n = &mut self.nodes[i];
        if n.state != MacState::Contend || n.busy {
            return;
        }
        let start = now.max(n.idle_since + difs);
        n.count_start = Some(start);
        n.backoff_token += 1;
        let fire = start + u64::from(n.slots_left) * slot;
        let token = n.backoff_token;
        self.q.schedule(fire, Event::Backoff { node: i, token });
    }

    fn maybe_contend(&mut self, i: usize) {
        let n = &mut self.nodes[i];
        if n.state != MacState::Idle || (!n.hello_pending && n.queue.is_empty()) {
            return;
        }
        n.state = MacState::Contend;
        n.slots_left = n.backoff.draw(&mut n.rng_backoff);
        n.count_start = None;
        n.backoff_token += 1;
        self.resume(i);
    }

    fn arm_timer(&mut self, i: usize) -> u64 {
        self.nodes[i].timer_token += 1;
        self.nodes[i].timer_token
    }

    fn transmit_head(&mut self, i: usize) {
        let now = self.now();
        if self.nodes[i].hello_pending {
            self.nodes[i].hello_pending = false;
            self.nodes[i].state = MacState::SendingHello;
            let frame = Frame {
                src: i,
                rate: RateClass::R1,
                bits: FrameSpec::hello().mpdu_bits(),
                airtime: to_ns(FrameSpec::hello().airtime(RateClass::R1)),
                nav_until: 0,
                body: Body::Hello { position: self.pos(i, now) },
            };
            self.start_tx(i, frame, true);
            return;
        }
        let Some(pkt) = self.nodes[i].queue.front().cloned() else {
            self.nodes[i].state = MacState::Idle;
            return;
        };
        self.forwarding_decisions += 1;
        let here = self.pos(i, now);
        let dest = self.pos(pkt.dst, now);
        let cands = self.nodes[i]
            .table
            .candidate_list(here, dest, self.cfg.l, to_secs(now), self.n_bits);
        if cands.is_empty() {
            self.nodes[i].queue.pop_front();
            self.drop_copy(&pkt, on_local_maximum(), i, true);
            self.nodes[i].state = MacState::Idle;
            self.nodes[i].backoff.reset();
            self.top_up_source(i);
            self.maybe_contend(i);
            return;
        }
        match self.cfg.csi_scheme {
            CsiScheme::Ideal => {
                let mut truth = Vec::with_capacity(cands.len());
                for c in &cands {
                    let p = self.pos(c.node_id, now);
                    let z = here.dist(dest) - p.dist(dest);
                    if z <= 0.0 {
                        continue;
                    }
                    let h = self.link_gain(i, c.node_id, now);
                    let signal = self.mean_power(i, c.node_id, now) * h.norm_sqr();
                    let interference = self.medium.interference_at(c.node_id, None);
                    truth.push(RelayCandidate {
                        node_id: c.node_id,
                        position: p,
                        progress: z,
                        snr_estimate: signal / (self.pl.noise_w + interference),
                        csi_age_s: 0.0,
                    });
                }
                match select_rate_relay(&truth, self.n_bits) {
                    Ok(sel) => self.send_data(i, pkt, sel.node_id, sel.rate, true),
                    Err(_) => {
                        self.nodes[i].queue.pop_front();
                        self.drop_copy(&pkt, on_local_maximum(), i, true);
                        self.nodes[i].state = MacState::Idle;
                        self.top_up_source(i);
                        self.maybe_contend(i);
                    }
                }
            }
            CsiScheme::RtsCsi | CsiScheme::CtsCsi => {
                let count = cands.len();
                let airtime = to_ns(self.timing.mrts_airtime_for(count));
                let mrts_end = now + airtime;
                let data_start = mrts_end + count as u64 * (self.sifs + self.cts_air) + self.sifs;
                // Reserve through a worst-case (1 Mbps) data exchange.
                let nav_until = data_start + to_ns(phy::data_duration(RateClass::R1));
                let frame = Frame {
                    src: i,
                    rate: RateClass::R1,
                    bits: FrameSpec::mrts(count).mpdu_bits(),
                    airtime,
                    nav_until,
                    body: Body::Mrts {
                        candidates: cands.iter().map(|c| c.node_id).collect(),
                    },
                };
                self.nodes[i].state = MacState::SendingMrts { started: now };
                self.start_tx(i, frame, true);
            }
        }
    }

    fn send_data(&mut self, i: usize, packet: Packet, to: usize, rate: RateClass, contended: bool) {
        let spec = FrameSpec::data(self.cfg.packet_bytes);
        let airtime = to_ns(spec.airtime(rate));
        let now = self.now();
        let frame = Frame {
            src: i,
            rate,
            bits: spec.mpdu_bits(),
            airtime,
            nav_until: now + airtime + self.sifs + self.ack_air,
            body: Body::Data { to, packet: packet.clone() },
        };
        self.data_attempts += 1;
        self.data_attempt_airtime += to_secs(airtime + self.sifs + self.ack_air);
        self.nodes[i].state = MacState::SendingData { packet_id: packet.id };
        self.start_tx(i, frame, contended);
    }

    fn on_sent(&mut self, i: usize, frame: &Frame, now: SimTime) {
        match &frame.body {
            Body::Hello { .. } => {
                self.nodes[i].state = MacState::Idle;
                self.maybe_contend(i);
            }
            Body::Mrts { candidates } => {
                let MacState::SendingMrts { started } = self.nodes[i].state else {
                    return;
                };
                let data_start = now + candidates.len() as u64 * (self.sifs + self.cts_air) + self.sifs;
                self.nodes[i].state = MacState::AwaitCts {
                    started,
                    heard: Vec::new(),
                    data_start,
                    mrts_end: now,
                };
                let token = self.arm_timer(i);
                self.q.schedule(data_start, Event::Decide { node: i, token });
            }
            Body::Data { packet, .. } => {
                if let MacState::SendingData { packet_id } = self.nodes[i].state {
                    debug_assert_eq!(packet_id, packet.id);
                    self.nodes[i].state = MacState::AwaitAck { packet_id };
                    let token = self.arm_timer(i);
                    let deadline = now + self.sifs + self.ack_air + self.slot;
                    self.q.schedule(deadline, Event::AckTimeout { node: i, token });
                }
            }
            Body::Cts { .. } | Body::Ack { .. } => {}
        }
    }

    fn on_receive(&mut self, j: usize, frame: &Frame, sinr: f64, mean_sinr: f64, tx: &ActiveTx) {
        let now = self.now();
        match &frame.body {
            Body::Hello { position } => {
                self.nodes[j].table.process_hello(frame.src, *position, mean_sinr, to_secs(now));
            }
            Body::Mrts { candidates } => {
                let slot = candidates.iter().position(|&c| c == j);
                let node = &self.nodes[j];
                let free = !node.state.in_exchange() && node.transmitting.is_none() && node.nav_until <= now;
                if let (Some(idx), true) = (slot, free) {
                    let start = now + self.sifs + idx as u64 * (self.cts_air + self.sifs);
                    let cts = Frame {
                        src: j,
                        rate: RateClass::R1,
                        bits: FrameSpec::cts().mpdu_bits(),
                        airtime: self.cts_air,
                        nav_until: frame.nav_until,
                        body: Body::Cts {
                            initiator: frame.src,
                            slot: idx + 1,
                            position: self.pos(j, now),
                            measured_sinr: sinr,
                        },
                    };
                    self.q.schedule(start, Event::Respond { node: j, frame: cts });
                }
                if !self.nodes[j].state.in_exchange() {
                    self.set_nav(j, frame.nav_until, frame.src, false);
                }
            }
            Body::Cts {
                initiator,
                slot,
                position,
                measured_sinr,
            } => {
                if *initiator == j {
                    self.on_cts(j, frame.src, *slot, *position, *measured_sinr, tx);
                } else if !self.nodes[j].state.in_exchange() {
                    self.set_nav(j, frame.nav_until, *initiator, false);
                }
            }
            Body::Data { to, packet } => {
                if *to == j {
                    let ack = Frame {
                        src: j,
                        rate: RateClass::R1,
                        bits: FrameSpec::ack().mpdu_bits(),
                        airtime: self.ack_air,
                        nav_until: 0,
                        body: Body::Ack {
                            to: frame.src,
                            packet_id: packet.id,
                        },
                    };
                    self.q.schedule(now + self.sifs, Event::Respond { node: j, frame: ack });
                    // The reservation made for this exchange no longer binds us.
                    if self.nodes[j].nav_owner == Some(frame.src) {
                        self.set_nav(j, now, frame.src, true);
                    }
                    self.accept(j, packet.clone());
                } else if !self.nodes[j].state.in_exchange() {
                    self.set_nav(j, frame.nav_until, frame.src, true);
                }
            }
            Body::Ack { to, packet_id } => {
                if *to == j {
                    if let MacState::AwaitAck { packet_id: want } = self.nodes[j].state {
                        if want == *packet_id {
                            self.attempt_succeeded(j);
                        }
                    }
                }
            }
        }
    }

    fn on_cts(&mut self, i: usize, from: usize, slot: usize, position: Vec2, measured: f64, tx: &ActiveTx) {
        let now = self.now();
        let MacState::AwaitCts { data_start, mrts_end, .. } = self.nodes[i].state else {
            return;
        };
        let Some(pkt) = self.nodes[i].queue.front() else { return };
        let dest = self.pos(pkt.dst, now);
        let progress = self.pos(i, now).dist(dest) - position.dist(dest);
        if progress <= 0.0 {
            return;
        }
        let (estimate, age) = match self.cfg.csi_scheme {
            CsiScheme::RtsCsi => (measured, to_secs(data_start - mrts_end)),
            _ => {
                let horizon = data_start - now;
                let fd = self.doppler(i, from);
                let count = crate::predictor::CTS_PILOTS;
                let times = PilotBlock::timestamps_ending_at(to_secs(now), count, self.pilot_cfg.pilot_rate_hz);
                let noise_sd = (0.5 / crate::channel::db_to_linear(self.pilot_cfg.pilot_snr_db)).sqrt();
                let mut obs = Vec::with_capacity(count);
                for &t in &times {
                    let h = self.link_gain(i, from, to_ns(t.max(0.0)));
                    let rng = &mut self.nodes[i].rng_pilot;
                    let nr: f64 = StandardNormal.sample(rng);
                    let ni: f64 = StandardNormal.sample(rng);
                    obs.push(h + Complex64::new(nr, ni) * noise_sd);
                }
                let block = PilotBlock {
                    observations: obs,
                    timestamps: times,
                };
                let predictor = self
                    .predictors
                    .get(fd, to_secs(horizon))
                    .expect("pilot rate exceeds twice the Doppler");
                let avg_snr = tx.mean_power[i] / self.pl.noise_w;
                let (_, g) = predict_gain(&block, &predictor, avg_snr).expect("full pilot block");
                (g, to_secs(horizon))
            }
        };
        if let MacState::AwaitCts { heard, .. } = &mut self.nodes[i].state {
            heard.push(RelayCandidate {
                node_id: from,
                position,
                progress,
                snr_estimate: estimate,
                csi_age_s: age,
            });
            let _ = slot;
        }
    }

    fn decide(&mut self, i: usize) {
        let now = self.now();
        let MacState::AwaitCts { started, heard, .. } = std::mem::replace(&mut self.nodes[i].state, MacState::Idle)
        else {
            return;
        };
        self.exchange_overhead += to_secs(now - started);
        let Some(pkt) = self.nodes[i].queue.front().cloned() else {
            return;
        };
        match select_rate_relay(&heard, self.n_bits) {
            Ok(sel) => self.send_data(i, pkt, sel.node_id, sel.rate, false),
            Err(_) => self.attempt_failed(i),
        }
    }

    fn attempt_succeeded(&mut self, i: usize) {
        self.data_successes += 1;
        self.nodes[i].timer_token += 1;
        if let Some(pkt) = self.nodes[i].queue.pop_front() {
            self.release_copy(&pkt);
        }
        self.nodes[i].backoff.reset();
        self.nodes[i].state = MacState::Idle;
        self.top_up_source(i);
        self.maybe_contend(i);
    }

    fn attempt_failed(&mut self, i: usize) {
        self.nodes[i].timer_token += 1;
        self.nodes[i].state = MacState::Idle;
        if !self.nodes[i].backoff.on_failure() {
            self.nodes[i].backoff.reset();
            if let Some(pkt) = self.nodes[i].queue.pop_front() {
                self.drop_copy(&pkt, DropCause::RetryLimit, i, true);
            }
            self.top_up_source(i);
        }
        self.maybe_contend(i);
    }

    // ---- traffic and forwarding -------------------------------------------

    fn on_hello_timer(&mut self, i: usize) {
        let now = self.now();
        if now >= self.end_run {
            return;
        }
        self.nodes[i].hello_pending = true;
        self.maybe_contend(i);
        let interval = self.cfg.hello_interval_s;
        let jitter = self.nodes[i].rng_hello.random_range(-0.05..0.05) * interval;
        let next = now + to_ns(interval + jitter);
        self.q.schedule(next, Event::Hello { node: i });
    }

    fn new_packet(&mut self, flow: usize) -> Packet {
        let now = self.now();
        self.next_packet += 1;
        let f = &mut self.flows[flow];
        f.sent += 1;
        Packet {
            id: self.next_packet,
            flow,
            src: f.src,
            dst: f.dst,
            created: now,
            hops: 0,
            ttl: self.cfg.ttl,
        }
    }

    fn enqueue_at_source(&mut self, flow: usize) {
        let pkt = self.new_packet(flow);
        let src = pkt.src;
        self.fates.insert(
            pkt.id,
            Fate {
                flow,
                live: 0,
                outcome: None,
                last_drop: None,
            },
        );
        if self.nodes[src].queue.len() >= self.cfg.queue_limit {
            self.drop_copy(&pkt, DropCause::QueueOverflow, src, false);
            return;
        }
        self.nodes[src].accepted.insert(pkt.id);
        self.fates.get_mut(&pkt.id).expect("inserted").live += 1;
        self.nodes[src].queue.push_back(pkt);
        self.maybe_contend(src);
    }

    fn on_generate(&mut self, flow: usize) {
        let now = self.now();
        if now >= self.end_gen {
            return;
        }
        match self.cfg.traffic {
            Traffic::Cbr => {
                self.enqueue_at_source(flow);
                let next = now + to_ns(self.cfg.packet_interval_s);
                if next < self.end_gen {
                    self.q.schedule(next, Event::Generate { flow });
                }
            }
            Traffic::Saturated => {
                let src = self.flows[flow].src;
                self.top_up_source(src);
            }
        }
    }

    fn top_up_source(&mut self, node: usize) {
        if self.cfg.traffic != Traffic::Saturated || self.now() >= self.end_gen {
            return;
        }
        let Some(flow) = self
            .flows
            .iter()
            .position(|f| f.src == node && f.start <= self.q.now())
        else {
            return;
        };
        while self.nodes[node].queue.len() < SATURATED_BACKLOG {
            self.enqueue_at_source(flow);
        }
    }

    fn accept(&mut self, j: usize, mut pkt: Packet) {
        if !self.nodes[j].accepted.insert(pkt.id) {
            return;
        }
        pkt.hops += 1;
        if pkt.dst == j {
            let now = self.now();
            let fate = self.fates.get_mut(&pkt.id).expect("tracked packet");
            if fate.outcome.is_none() {
                fate.outcome = Some(Outcome::Delivered);
                let f = &mut self.flows[pkt.flow];
                f.delivered += 1;
                f.delay_sum += to_secs(now - pkt.created);
                f.hop_sum += u64::from(pkt.hops);
                self.log(j, "DELIVER", FrameKind::Data, Some(pkt.src), None);
            }
            return;
        }
        pkt.ttl -= 1;
        if pkt.ttl == 0 {
            self.drop_copy(&pkt, DropCause::Ttl, j, false);
            return;
        }
        if self.nodes[j].queue.len() >= self.cfg.queue_limit {
            self.drop_copy(&pkt, DropCause::QueueOverflow, j, false);
            return;
        }
        self.fates.get_mut(&pkt.id).expect("tracked packet").live += 1;
        self.nodes[j].queue.push_back(pkt);
        self.maybe_contend(j);
    }

    /// A queued copy left this node after a successful hop.
    fn release_copy(&mut self, pkt: &Packet) {
        let fate = self.fates.get_mut(&pkt.id).expect("tracked packet");
        fate.live -= 1;
        if fate.live == 0 && fate.outcome.is_none() {
            if let Some(c) = fate.last_drop {
                fate.outcome = Some(Outcome::Dropped(c));
            }
        }
    }

    /// Lose one copy. Queued copies count as live; copies refused on arrival
    /// never did.
    fn drop_copy(&mut self, pkt: &Packet, cause: DropCause, at: usize, queued: bool) {
        let fate = self.fates.get_mut(&pkt.id).expect("tracked packet");
        if queued {
            fate.live -= 1;
        }
        fate.last_drop = Some(cause);
        if fate.live == 0 && fate.outcome.is_none() {
            fate.outcome = Some(Outcome::Dropped(cause));
        }
        self.log(at, "DROP", FrameKind::Data, Some(pkt.dst), None);
    }

    fn log(&mut self, node: usize, event: &str, kind: FrameKind, peer: Option<usize>, snr: Option<f64>) {
        if !self.cfg.trace {
            return;
        }
        let peer = peer.map_or_else(|| "-1".to_string(), |p| p.to_string());
        let snr = snr.map_or_else(String::new, |s| format!("{:.3}", linear_to_db(s)));
        let busy = u8::from(self.nodes[node].busy);
        self.trace
            .push(format!("{:.9},{node},{event},{kind},{peer},{snr},{busy}", self.now_s()));
    }

    fn finish(self) -> RunOutput {
        let sim_end = self.cfg.sim_end_s;
        let mut flows: Vec<FlowMetrics> = self
            .flows
            .iter()
            .map(|f| FlowMetrics {
                src: f.src,
                dst: f.dst,
                start_s: to_secs(f.start),
                sent: f.sent,
                delivered: f.delivered,
                delay_sum_s: f.delay_sum,
                hop_sum: f.hop_sum,
                ..FlowMetrics::default()
            })
            .collect();
        let mut ids: Vec<&u64> = self.fates.keys().collect();
        ids.sort();
        for id in ids {
            let fate = &self.fates[id];
            let f = &mut flows[fate.flow];
            match fate.outcome {
                Some(Outcome::Delivered) => {}
                Some(Outcome::Dropped(c)) => match c {
                    DropCause::NoCandidate => f.drops_nocand += 1,
                    DropCause::RetryLimit => f.drops_retry += 1,
                    DropCause::QueueOverflow => f.drops_queue += 1,
                    DropCause::Ttl => f.drops_ttl += 1,
                },
                None => f.unfinished += 1,
            }
        }
        let sum = |g: fn(&FlowMetrics) -> u64| flows.iter().map(g).sum::<u64>();
        let sent = sum(|f| f.sent);
        let delivered = sum(|f| f.delivered);
        let throughput = flows
            .iter()
            .filter(|f| f.start_s < sim_end)
            .map(|f| f.delivered as f64 / (sim_end - f.start_s))
            .sum();
        let delay_total: f64 = flows.iter().map(|f| f.delay_sum_s).sum();
        let hop_total = sum(|f| f.hop_sum);
        let metrics = RunMetrics {
            seed: self.cfg.seed,
            v_max: self.cfg.v_max,
            l: self.cfg.l,
            scheme: self.cfg.csi_scheme,
            throughput_pps: throughput,
            delay_s: if delivered > 0 { delay_total / delivered as f64 } else { 0.0 },
            pdr: if sent > 0 { delivered as f64 / sent as f64 } else { 1.0 },
            hops: if delivered > 0 { hop_total as f64 / delivered as f64 } else { 0.0 },
            sent,
            delivered,
            drops_nocand: sum(|f| f.drops_nocand),
            drops_retry: sum(|f| f.drops_retry),
            drops_queue: sum(|f| f.drops_queue),
            drops_ttl: sum(|f| f.drops_ttl),
            unfinished: sum(|f| f.unfinished),
            flows,
            forwarding_decisions: self.forwarding_decisions,
            data_attempts: self.data_attempts,
            data_successes: self.data_successes,
            data_attempt_airtime_s: self.data_attempt_airtime,
            exchange_overhead_s: self.exchange_overhead,
            events: self.q.dispatched(),
        };
        RunOutput {
            metrics,
            trace: self.trace,
            cs_violations: self.cs_violations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn interference_sums_other_transmitters() {
        let mut m = Medium::default();
        assert_eq!(m.interference_at(0, None), 0.0);
        let mk = |src: usize, p: [f64; 4]| ActiveTx {
            src,
            rx_power: p.to_vec(),
            mean_power: p.to_vec(),
            end: 10,
        };
        let a = m.insert(mk(1, [1e-9, 0.0, 2e-9, 0.0]));
        m.insert(mk(2, [3e-9, 5e-9, 7e-9, 0.0]));
        m.insert(mk(3, [4e-10, 0.0, 0.0, 0.0]));
        let total = m.interference_at(0, None);
        assert!((total - (1e-9 + 3e-9 + 4e-10)).abs() < 1e-24);
        assert!((m.interference_at(0, Some(a)) - 3.4e-9).abs() < 1e-24);
        // A node never interferes with itself.
        assert_eq!(m.interference_at(2, None), 2e-9);
    }

    #[test]
    fn reception_extremes() {
        assert!(reception_decision(RateClass::R11, 1e9, 2272, 0.999_999));
        // One bit at zero SNR is a coin flip.
        assert!(reception_decision(RateClass::R1, 0.0, 1, 0.49));
        assert!(!reception_decision(RateClass::R1, 0.0, 1, 0.5));
    }

    #[test]
    fn reception_rate_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (rate, sinr, bits) = (RateClass::R2, 10f64.powf(0.9), 2272);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| reception_decision(rate, sinr, bits, rng.random()))
            .count();
        let p = phy::packet_success_prob(rate, sinr, bits);
        assert!((hits as f64 / trials as f64 - p).abs() < 0.01, "{p}");
    }
}
