use adhoc_csi::mac::CsiScheme;
use adhoc_csi::mobility::Vec2;
use adhoc_csi::sim::{run, ScenarioConfig, Traffic, TRACE_HEADER};

fn short(scheme: CsiScheme, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::desk();
    c.csi_scheme = scheme;
    c.seed = seed;
    c.sim_end_s = 45.0;
    c.start_window_s = (8.0, 15.0);
    c.v_max = 20.0;
    c
}

#[test]
fn same_seed_same_metrics() {
    let c = short(CsiScheme::CtsCsi, 5);
    let a = run(&c).unwrap().metrics;
    let b = run(&c).unwrap().metrics;
    assert_eq!(a.csv_row(), b.csv_row());
    assert_eq!(a, b);
    let other = run(&short(CsiScheme::CtsCsi, 6)).unwrap().metrics;
    assert_ne!(a.csv_row(), other.csv_row());
}

#[test]
fn every_packet_is_accounted_for() {
    for scheme in CsiScheme::ALL {
        for seed in 1..=2 {
            let m = run(&short(scheme, seed)).unwrap().metrics;
            assert!(m.is_conserved(), "{scheme} seed {seed}");
            assert!(m.sent > 0);
            let drops = m.drops_nocand + m.drops_retry + m.drops_queue + m.drops_ttl;
            assert_eq!(m.sent, m.delivered + drops + m.unfinished);
        }
    }
}

#[test]
fn contention_respects_carrier_sense_and_nav() {
    for scheme in CsiScheme::ALL {
        let mut c = short(scheme, 3);
        c.trace = true;
        let out = run(&c).unwrap();
        assert_eq!(out.cs_violations, 0, "{scheme}");
        assert_eq!(TRACE_HEADER.split(',').count(), 7);
        let mut last = 0.0f64;
        let mut checked = 0;
        for line in &out.trace {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 7, "{line}");
            let t: f64 = f[0].parse().unwrap();
            assert!(t >= last, "time went backwards at {line}");
            last = t;
            // Frames that begin only after winning contention.
            let contended = match f[3] {
                "HELLO" | "MRTS" => true,
                "DATA" => scheme == CsiScheme::Ideal,
                _ => false,
            };
            if f[2] == "TX" && contended {
                assert_eq!(f[6], "0", "{line}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }
}

#[test]
fn static_pair_carries_the_offered_load() {
    let mut c = ScenarioConfig::desk();
    c.node_count = 2;
    c.positions = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
    c.flows = vec![(0, 1)];
    c.fading = false;
    c.csi_scheme = CsiScheme::Ideal;
    c.sim_end_s = 120.0;
    c.start_window_s = (10.0, 10.0);
    let m = run(&c).unwrap().metrics;
    assert!(m.pdr > 0.99, "{}", m.pdr);
    assert!((m.throughput_pps - 4.0).abs() < 0.1, "{}", m.throughput_pps);
    assert!((m.hops - 1.0).abs() < 1e-12);
}

#[test]
fn no_flows_means_no_traffic() {
    let mut c = short(CsiScheme::RtsCsi, 1);
    c.flow_count = 0;
    let m = run(&c).unwrap().metrics;
    assert_eq!(m.sent, 0);
    assert_eq!(m.throughput_pps, 0.0);
    assert_eq!(m.pdr, 1.0);
}

#[test]
fn saturated_source_keeps_the_link_busy() {
    let mut c = ScenarioConfig::desk();
    c.node_count = 2;
    c.positions = vec![Vec2::new(0.0, 0.0), Vec2::new(60.0, 0.0)];
    c.flows = vec![(0, 1)];
    c.csi_scheme = CsiScheme::Ideal;
    c.traffic = Traffic::Saturated;
    c.sim_end_s = 20.0;
    c.start_window_s = (5.0, 5.0);
    let m = run(&c).unwrap().metrics;
    // Far above the 4 packet/s CBR load.
    assert!(m.throughput_pps > 300.0, "{}", m.throughput_pps);
    assert!(m.is_conserved());
}

#[test]
fn invalid_configs_are_refused() {
    let mut c = ScenarioConfig::desk();
    c.l = 0;
    assert!(run(&c).is_err());
    let mut c = ScenarioConfig::desk();
    c.flows = vec![(0, 1), (1, 2)];
    assert!(run(&c).is_err());
}
