use lfrt_core::lightfield::{ColorSpace, LightField};
use lfrt_core::noise::calibrate::{
    analyze_dark_frames, calibrate_iso, fit_photon_transfer, gray_chart_points, simulate_dark_frames,
    simulate_gray_chart,
};
use lfrt_core::noise::{synthesize_with, NoiseParams};
use ndarray::Array5;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sensor(k: f64) -> NoiseParams {
    NoiseParams {
        iso: 800,
        k,
        sigma_read: 4.0,
        sigma_row: 1.5,
        dark_rate: 1.0,
        q: 1.0,
    }
}

fn levels() -> Vec<f64> {
    (0..10).map(|i| 60.0 + 90.0 * i as f64).collect()
}

#[test]
fn gain_recovered_across_gains() {
    for (i, k) in [0.1, 0.8, 2.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let set = simulate_gray_chart(&sensor(k), &levels(), 64, 32, &mut rng).unwrap();
        let fit = fit_photon_transfer(&gray_chart_points(&set).unwrap()).unwrap();
        assert!((fit.k / k - 1.0).abs() <= 0.02, "k {k}: {fit:?}");
    }
}

#[test]
fn dark_frames_recover_each_parameter() {
    let truth = sensor(0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = simulate_dark_frames(&truth, 32, 1024, 128, &mut rng).unwrap();
    let d = analyze_dark_frames(&set, truth.k).unwrap();
    for (name, got, want) in [
        ("dark_rate", d.dark_rate, 1.0),
        ("sigma_row", d.sigma_row, 1.5),
        ("sigma_read", d.sigma_read, 4.0),
    ] {
        assert!((got / want - 1.0).abs() <= 0.05, "{name}: {got} vs {want}");
    }
}

#[test]
fn full_iso_calibration() {
    let truth = sensor(0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gray = simulate_gray_chart(&truth, &levels(), 64, 32, &mut rng).unwrap();
    let dark = simulate_dark_frames(&truth, 16, 512, 128, &mut rng).unwrap();
    let p = calibrate_iso(&gray, &dark, 1.0).unwrap();
    assert!((p.k / 0.8 - 1.0).abs() <= 0.02, "{p:?}");
    assert!((p.sigma_read / 4.0 - 1.0).abs() <= 0.05, "{p:?}");
}

/// Mean/variance pairs measured on synthesized output follow the injected gain.
#[test]
fn synthesis_closes_the_photon_transfer_loop() {
    let p = NoiseParams {
        iso: 0,
        k: 0.002,
        sigma_read: 0.004,
        sigma_row: 0.0015,
        dark_rate: 1.0,
        q: 1.0 / 1023.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points: Vec<(f64, f64)> = [0.2, 0.35, 0.5, 0.65, 0.8, 0.95]
        .iter()
        .map(|&level| {
            let gt = LightField::new(Array5::from_elem((1, 1, 1, 200, 200), level), ColorSpace::Y, 1023.0).unwrap();
            let s = synthesize_with(&gt, &p, 0.5, &mut rng).unwrap();
            let v = s.l_in.views();
            let n = v.len() as f64;
            let mean = v.sum() / n;
            (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
        })
        .collect();
    let fit = fit_photon_transfer(&points).unwrap();
    assert!((fit.k / p.k - 1.0).abs() <= 0.03, "{fit:?}");
}
