use entangle::tempenc::*;
use proptest::prelude::*;

fn oracle_gamma(n: u64, bands: usize, scale: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..bands {
        let theta = std::f64::consts::PI * n as f64 * (2.0 / scale).powi(k as i32);
        out.push(theta.sin());
        out.push(theta.cos());
    }
    out
}

proptest! {
    #[test]
    fn gamma_matches_closed_form(n in 0u64..10_000, bands in 1usize..40, scale in 3.0f64..1000.0) {
        let cfg = TemporalEncodingConfig::new(bands, scale).unwrap();
        let got = temporal_encode(n, &cfg);
        let want = oracle_gamma(n, bands, scale);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
        }
    }

    #[test]
    fn gamma_is_bounded(n in 0u64..=1_000_000) {
        let g = temporal_encode(n, &TemporalEncodingConfig::default());
        prop_assert!(g.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn integer_band_zero_degenerates(n in 0u64..100_000) {
        let g = temporal_encode(n, &TemporalEncodingConfig::default());
        prop_assert!(g[0].abs() < 1e-9);
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!((g[1] - sign).abs() < 1e-9);
    }

    #[test]
    fn flare_contains_current_frame(
        frames in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 3..12),
    ) {
        let cfg = FlareConfig::default();
        let rows = augment_with_flare(&frames, &cfg).unwrap();
        let d = 3;
        for t in cfg.history - 1..frames.len() {
            let block = &rows[t][(cfg.history - 1) * d..cfg.history * d];
            let same = block.iter().zip(&frames[t]).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(rows[t].len(), cfg.output_dim(d));
        }
    }

    #[test]
    fn te_separates_identical_inputs(
        f in prop::collection::vec(-1.0f64..1.0, 4),
        p in prop::collection::vec(-1.0f64..1.0, 2),
        len in 2usize..60,
    ) {
        let feats = vec![f; len];
        let props = vec![p; len];
        let rows = augment_with_te(&feats, &props, &TemporalEncodingConfig::default()).unwrap();
        for a in 0..len {
            for b in a + 1..len {
                let d: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| (x - y).powi(2)).sum();
                prop_assert!(d > 0.0);
            }
        }
    }
}

#[test]
fn gamma_injective_on_working_range() {
    let cfg = TemporalEncodingConfig::default();
    let g: Vec<Vec<f64>> = (0..=500).map(|n| temporal_encode(n, &cfg)).collect();
    for a in 0..g.len() {
        for b in a + 1..g.len() {
            let d = g[a].iter().zip(&g[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(d > 1e-6, "{a} {b}");
        }
    }
}

#[test]
fn constant_trajectory_has_zero_differences() {
    let frames = vec![vec![0.3, -0.2]; 6];
    let cfg = FlareConfig::default();
    for row in augment_with_flare(&frames, &cfg).unwrap() {
        assert!(row[cfg.history * 2..].iter().all(|&x| x == 0.0));
    }
}
