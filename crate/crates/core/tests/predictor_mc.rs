use adhoc_csi::channel::{db_to_linear, FadingProcess};
use adhoc_csi::mac::{cts_delay, rts_csi_age, MacTiming};
use adhoc_csi::predictor::{analytic_mse, design_predictor, outdated_mse, predict_gain, PilotBlock, PredictorConfig};
use adhoc_csi::seeding::mix64;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn empirical_nmse(fd: f64, cfg: &PredictorConfig, trials: u64) -> f64 {
    let pred = design_predictor(fd, cfg).unwrap();
    let sd = (0.5 / db_to_linear(cfg.pilot_snr_db)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut err, mut pow) = (0.0, 0.0);
    for k in 0..trials {
        let p = FadingProcess::new(fd, mix64(k + 31));
        let end = 0.5 + (k % 97) as f64 * 0.011;
        let times = PilotBlock::timestamps_ending_at(end, cfg.order, cfg.pilot_rate_hz);
        let observations = times
            .iter()
            .map(|&t| {
                let nr: f64 = StandardNormal.sample(&mut rng);
                let ni: f64 = StandardNormal.sample(&mut rng);
                p.sample_gain(t) + Complex64::new(nr, ni) * sd
            })
            .collect();
        let block = PilotBlock { observations, timestamps: times };
        let (h_hat, _) = predict_gain(&block, &pred, 1.0).unwrap();
        let h = p.sample_gain(end + cfg.horizon_s);
        err += (h - h_hat).norm_sqr();
        pow += h.norm_sqr();
    }
    err / pow
}

#[test]
fn empirical_error_tracks_analytic() {
    let t = MacTiming::default();
    for (fd, l) in [(50.0, 1), (200.0, 4)] {
        let horizon = cts_delay(4, l, &t).unwrap();
        let cfg = PredictorConfig::default().with_horizon(horizon);
        let want = analytic_mse(fd, &cfg).unwrap();
        let got = empirical_nmse(fd, &cfg, 6000);
        assert!((got - want).abs() / want < 0.1, "fd {fd} l {l}: {got} vs {want}");
    }
}

#[test]
fn prediction_beats_outdated_measurement() {
    let t = MacTiming::default();
    let age = rts_csi_age(4, &t);
    for fd in [10.0, 50.0, 100.0, 200.0] {
        for l in 1..=4 {
            let cfg = PredictorConfig::default().with_horizon(cts_delay(4, l, &t).unwrap());
            assert!(analytic_mse(fd, &cfg).unwrap() < outdated_mse(fd, age));
        }
    }
}

#[test]
fn longer_horizon_costs_accuracy() {
    let t = MacTiming::default();
    for fd in [10.0, 100.0] {
        let mse = |l| analytic_mse(fd, &PredictorConfig::default().with_horizon(cts_delay(4, l, &t).unwrap())).unwrap();
        assert!(mse(1) >= mse(2) && mse(2) >= mse(3) && mse(3) >= mse(4));
    }
}
