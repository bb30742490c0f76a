use chronon::peakfit::cascade_model::{model, tau_max};
use chronon::peakfit::{fit_cascade_xy, CascadeFitOptions};

const BIN: f64 = 16.0;

fn truth() -> [f64; 8] {
    // amplitude, oscillation, τr, τd, ω, φ, background, t0
    [4000.0, 0.3, 150.0, 1140.0, 2.0 * std::f64::consts::PI / 878.0, 1.1, 20.0, 3000.0]
}

fn samples(p: &[f64; 8]) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..750).map(|k| (k as f64 + 0.5) * BIN).collect();
    let y = x.iter().map(|&t| model(p, t)).collect();
    (x, y)
}

fn opts(p: &[f64; 8]) -> CascadeFitOptions {
    CascadeFitOptions {
        omega_guess_rad_per_ps: p[4] * 1.02,
        ..CascadeFitOptions::default()
    }
}

#[test]
fn translation_moves_only_the_onset() {
    let p = truth();
    let (x, y) = samples(&p);
    let base = fit_cascade_xy(&x, &y, 0, BIN, None, &opts(&p)).unwrap();
    for s in [37.0, 250.5, 1100.0] {
        let mut q = p;
        q[7] += s;
        let (x, y) = samples(&q);
        let moved = fit_cascade_xy(&x, &y, 0, BIN, None, &opts(&q)).unwrap();
        assert!(
            (moved.tau_max_ps.value - base.tau_max_ps.value - s).abs() < 1e-4,
            "shift {s}: {} vs {}",
            moved.tau_max_ps.value,
            base.tau_max_ps.value
        );
        for (a, b) in [
            (moved.tau_rise_ps.value, base.tau_rise_ps.value),
            (moved.tau_decay_ps.value, base.tau_decay_ps.value),
            (moved.amplitude.value, base.amplitude.value),
        ] {
            assert!((a / b - 1.0).abs() < 1e-5, "shift {s}: {a} vs {b}");
        }
    }
}

#[test]
fn origin_offset_only_relabels_the_axis() {
    let p = truth();
    let (x, y) = samples(&p);
    let a = fit_cascade_xy(&x, &y, 0, BIN, None, &opts(&p)).unwrap();
    let origin = 192_787_760_123i64;
    let b = fit_cascade_xy(&x, &y, origin, BIN, None, &opts(&p)).unwrap();
    assert_eq!(a.tau_max_ps, b.tau_max_ps);
    assert_eq!(b.axis_origin_ps, origin);
    assert!((b.tau_max_abs_ps() - a.tau_max_abs_ps() - origin as f64).abs() < 1e-3);
}

#[test]
fn scaling_counts_scales_amplitudes_only() {
    let p = truth();
    let (x, y) = samples(&p);
    let a = fit_cascade_xy(&x, &y, 0, BIN, None, &opts(&p)).unwrap();
    let k = 7.5;
    let yk: Vec<f64> = y.iter().map(|v| v * k).collect();
    let b = fit_cascade_xy(&x, &yk, 0, BIN, None, &opts(&p)).unwrap();
    assert!((b.amplitude.value / a.amplitude.value - k).abs() < 1e-6 * k);
    assert!((b.background.value / a.background.value - k).abs() < 1e-6 * k);
    for (u, v) in [
        (a.tau_rise_ps.value, b.tau_rise_ps.value),
        (a.tau_decay_ps.value, b.tau_decay_ps.value),
        (a.omega_rad_per_ps.value, b.omega_rad_per_ps.value),
        (a.tau_max_ps.value, b.tau_max_ps.value),
    ] {
        assert!((u / v - 1.0).abs() < 1e-6, "{u} vs {v}");
    }
}

#[test]
fn fitted_maximum_matches_the_model_maximum() {
    let p = truth();
    let (x, y) = samples(&p);
    let fit = fit_cascade_xy(&x, &y, 0, BIN, None, &opts(&p)).unwrap();
    assert!((fit.tau_max_ps.value - tau_max(&p)).abs() < 1e-3);
    let dense = (0..200_000).map(|k| k as f64 * 0.01 + p[7]).fold((0.0, f64::MIN), |best, t| {
        let v = model(&p, t);
        if v > best.1 {
            (t, v)
        } else {
            best
        }
    });
    assert!((tau_max(&p) - dense.0).abs() < 0.02, "{} vs {}", tau_max(&p), dense.0);
}
