use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use chronon::correlator::{correlate, find_peak, PeakSearchConfig};

/// `b` uniform over `span_ps`; `a` carries a copy of a fraction of `b`
/// delayed by `delay_ps` with Gaussian jitter, plus uncorrelated tags.
fn correlated_pair(seed: u64, n: usize, span_ps: u64, delay_ps: i64, jitter_ps: f64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, jitter_ps).unwrap();
    let mut b: Vec<u64> = (0..n).map(|_| rng.random_range(0..span_ps)).collect();
    b.sort_unstable();
    let mut a = Vec::new();
    for &t in &b {
        if rng.random::<f64>() < 0.3 {
            a.push((t as i64 + delay_ps + jitter.sample(&mut rng).round() as i64).max(0) as u64);
        }
    }
    a.extend((0..n / 2).map(|_| rng.random_range(0..span_ps)));
    a.sort_unstable();
    (a, b)
}

#[test]
fn every_refinement_stage_keeps_the_peak_in_its_window() {
    for (seed, delay) in [(1, 96_393_880i64), (2, -3_217_554), (3, 123_456_789_012)] {
        let (a, b) = correlated_pair(seed, 50_000, 10_000_000_000_000, delay, 50.0);
        let res = find_peak(&a, &b, (-500_000_000_000, 500_000_000_000), 16, &PeakSearchConfig::default()).unwrap();
        assert!(res.stages.len() >= 3, "seed {seed}: {} stages", res.stages.len());
        for s in &res.stages {
            assert!(
                s.window_start_ps <= delay && delay < s.window_end_ps,
                "seed {seed}: stage at {} ps bins lost the peak: [{}, {})",
                s.bin_width_ps,
                s.window_start_ps,
                s.window_end_ps
            );
        }
        let widths: Vec<u64> = res.stages.iter().map(|s| s.bin_width_ps).collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]), "widths not decreasing: {widths:?}");
        assert_eq!(*widths.last().unwrap(), 16);
        assert!((res.tau_peak_ps - delay).abs() <= 100, "seed {seed}: {} vs {delay}", res.tau_peak_ps);
    }
}

#[test]
fn common_shift_leaves_histogram_unchanged() {
    let (a, b) = correlated_pair(4, 20_000, 1_000_000_000, 5_000, 40.0);
    let h = correlate(&a, &b, 0, 10_000, 16).unwrap();
    let shift = 917_000_000_000_000u64;
    let a2: Vec<u64> = a.iter().map(|t| t + shift).collect();
    let b2: Vec<u64> = b.iter().map(|t| t + shift).collect();
    assert_eq!(correlate(&a2, &b2, 0, 10_000, 16).unwrap(), h);
}

#[test]
fn shifting_one_stream_moves_the_histogram() {
    let (a, b) = correlated_pair(5, 20_000, 1_000_000_000, 5_000, 40.0);
    let h = correlate(&a, &b, 0, 10_000, 16).unwrap();
    let s = 1_234_567i64;
    let a2: Vec<u64> = a.iter().map(|&t| (t as i64 + s) as u64).collect();
    let moved = correlate(&a2, &b, s, 10_000 + s, 16).unwrap();
    assert_eq!(moved.counts, h.counts);
    assert_eq!(moved.tau_start_ps, h.tau_start_ps + s);
}

#[test]
fn no_peak_in_uncorrelated_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut a: Vec<u64> = (0..20_000).map(|_| rng.random_range(0..1_000_000_000_000)).collect();
    let mut b: Vec<u64> = (0..20_000).map(|_| rng.random_range(0..1_000_000_000_000)).collect();
    a.sort_unstable();
    b.sort_unstable();
    let err = find_peak(&a, &b, (-1_000_000_000, 1_000_000_000), 16, &PeakSearchConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "no_peak");
}
