use adhoc_csi::channel::{jakes_autocorr, FadingProcess};
use adhoc_csi::seeding::mix64;

/// One sample per independent realization, at a realization-specific time.
fn envelope_samples(fd: f64, n: usize) -> Vec<f64> {
    (0..n as u64)
        .map(|k| {
            let p = FadingProcess::new(fd, mix64(k + 1));
            let t = (mix64(k ^ 0xabcdef) % 10_000) as f64 * 1e-3;
            p.sample_gain(t).norm()
        })
        .collect()
}

fn ks_rayleigh(mut r: Vec<f64>) -> f64 {
    r.sort_by(f64::total_cmp);
    let n = r.len() as f64;
    r.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = 1.0 - (-x * x).exp();
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn envelope_is_rayleigh() {
    for fd in [10.0, 100.0] {
        let n = 4000;
        let d = ks_rayleigh(envelope_samples(fd, n));
        // Asymptotic critical value at the 1% level.
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "fd {fd}: D = {d} >= {crit}");
    }
}

#[test]
fn mean_power_is_unity() {
    let r = envelope_samples(50.0, 20_000);
    let p = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
    assert!((p - 1.0).abs() < 0.03, "{p}");
}

fn ensemble_autocorr(fd: f64, tau: f64, realizations: u64, per: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0.0;
    for s in 0..realizations {
        let p = FadingProcess::new(fd, mix64(1000 + s));
        for k in 0..per {
            let t = k as f64 * 0.137;
            acc += (p.sample_gain(t) * p.sample_gain(t + tau).conj()).re;
            count += 1.0;
        }
    }
    acc / count
}

#[test]
fn autocorrelation_follows_bessel() {
    for fd in [10.0, 100.0] {
        for x in [0.05, 0.1, 0.2, 0.38, 0.6, 1.0, 1.5] {
            let tau = x / fd;
            let got = ensemble_autocorr(fd, tau, 200, 40);
            let want = jakes_autocorr(fd, tau);
            assert!((got - want).abs() < 0.05, "fd {fd} tau {tau}: {got} vs {want}");
        }
    }
}

#[test]
fn distinct_links_are_uncorrelated() {
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    let n = 20_000;
    for k in 0..n as u64 {
        let a = FadingProcess::new(80.0, mix64(2 * k + 7));
        let b = FadingProcess::new(80.0, mix64(2 * k + 8));
        let t = k as f64 * 1e-3;
        acc += a.sample_gain(t) * b.sample_gain(t).conj();
    }
    assert!((acc / n as f64).norm() < 0.05);
}

#[test]
fn retune_is_continuous() {
    let mut p = FadingProcess::new(40.0, 3);
    let t = 1.234;
    let before = p.sample_gain(t);
    p.retune(160.0, t);
    assert!((p.sample_gain(t) - before).norm() < 1e-9);
    // Faster fading afterwards: correlation over a fixed lag drops.
    let lag = 2e-3;
    assert!(jakes_autocorr(160.0, lag) < jakes_autocorr(40.0, lag));
}
