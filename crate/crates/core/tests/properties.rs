use henon_thermo::cli::to_json17;
use henon_thermo::henon::{inverse, step, MapParams, Point};
use henon_thermo::thermo::{
    gibbs_truncated, gurevich_pressure, linear_fit, pressure_at, t_interval, ShiftData, SymbolPotential,
    TruncatedShift,
};
use proptest::prelude::*;

fn potential() -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
    (1usize..=8).prop_flat_map(|k| (prop::collection::vec(-3.0f64..1.0, k), prop::collection::vec(1u32..=5, k)))
}

fn shift_pressure(base: &[f64], tau: &[u32]) -> f64 {
    let pot = SymbolPotential::new(base.to_vec(), tau.to_vec()).unwrap();
    TruncatedShift::new(&pot, None).unwrap().pressure()
}

/// Branches with the given return times whose lengths sum to `mass < 1`.
fn holed(lengths: &[f64], tau: &[u32], mass: f64) -> ShiftData {
    let total: f64 = lengths.iter().sum();
    let length: Vec<f64> = lengths.iter().map(|l| mass * l / total).collect();
    ShiftData {
        tau: tau.to_vec(),
        log_jac: length.iter().map(|l| -l.ln()).collect(),
        length,
        growth_rate: 0.0,
        sigma1: 1.5,
        sigma2: 4.5,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gurevich_matches_log_sum_exp((base, tau) in potential()) {
        let pot = SymbolPotential::new(base.clone(), tau).unwrap();
        let shift = TruncatedShift::new(&pot, None).unwrap();
        let exact = base.iter().map(|v| v.exp()).sum::<f64>().ln();
        prop_assert!((gurevich_pressure(&shift, 12).unwrap().limit - exact).abs() < 1e-10);
        prop_assert!((shift.pressure() - exact).abs() < 1e-12);
    }

    #[test]
    fn pressure_shifts_with_constants((base, tau) in potential(), c in -2.0f64..2.0) {
        let moved: Vec<f64> = base.iter().map(|v| v + c).collect();
        prop_assert!((shift_pressure(&moved, &tau) - shift_pressure(&base, &tau) - c).abs() < 1e-12);
    }

    #[test]
    fn pair_pressure_shifts_with_constants(pair in prop::collection::vec(prop::collection::vec(-2.0f64..1.0, 3), 3), c in -1.0f64..1.0) {
        let p = |m: &Vec<Vec<f64>>| {
            let pot = SymbolPotential::new(vec![0.0; 3], vec![1; 3]).unwrap().with_pairs(m.clone()).unwrap();
            TruncatedShift::new(&pot, None).unwrap().pressure()
        };
        let moved: Vec<Vec<f64>> = pair.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        prop_assert!((p(&moved) - p(&pair) - c).abs() < 1e-10);
    }

    #[test]
    fn gibbs_weights_form_a_distribution((base, tau) in potential()) {
        let pot = SymbolPotential::new(base, tau).unwrap();
        let g = gibbs_truncated(&TruncatedShift::new(&pot, None).unwrap()).unwrap();
        prop_assert!(g.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(g.entropy >= -1e-12);
    }

    #[test]
    fn truncation_is_monotone((base, tau) in potential()) {
        let pot = SymbolPotential::new(base, tau.clone()).unwrap();
        let mut last = f64::NEG_INFINITY;
        for cut in 1..=5 {
            if !tau.iter().any(|&t| t <= cut) {
                continue;
            }
            let p = TruncatedShift::new(&pot, Some(cut)).unwrap().pressure();
            prop_assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn induced_pressure_is_convex_and_decreasing(
        lengths in prop::collection::vec(0.1f64..1.0, 2..8),
        mass in 0.5f64..0.99,
    ) {
        let tau: Vec<u32> = (2..2 + lengths.len() as u32).collect();
        let d = holed(&lengths, &tau, mass);
        let ts: Vec<f64> = (0..=12).map(|i| -0.5 + 0.125 * i as f64).collect();
        let p: Vec<f64> = ts.iter().map(|&t| pressure_at(&d, t, &[tau.len() as u32 + 2]).unwrap().value).collect();
        prop_assert!(p.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(p.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -1e-10));
        // lengths summing to less than one put P(1) below zero
        prop_assert!(p[12] < 0.0);
    }

    #[test]
    fn interval_brackets_zero(t_u in 0.5f64..1.0, eps in 0.01f64..0.5, lambda in 0.6f64..0.8) {
        let (lo, hi) = t_interval(t_u, lambda, eps).unwrap();
        prop_assert!(lo < 0.0 && hi > 0.0);
        let (lo2, hi2) = t_interval(2.0 * t_u, lambda, eps).unwrap();
        prop_assert!((lo2 - 2.0 * lo).abs() < 1e-12 && (hi2 - 2.0 * hi).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_lines(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 0.3, a + b * i as f64 * 0.3)).collect();
        let f = linear_fit(&pts);
        prop_assert!((f.slope - b).abs() < 1e-9 && (f.intercept - a).abs() < 1e-9);
    }

    #[test]
    fn json17_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let text = to_json17(&serde_json::json!([x]));
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back[0], x);
    }

    #[test]
    fn inverse_undoes_the_map(x in -1.5f64..1.5, y in -0.01f64..0.01, b in 1e-6f64..1e-2) {
        let p = MapParams::desk(1.99, b).unwrap();
        let z = Point::new(x, y);
        let w = inverse(&p, step(&p, z)).unwrap();
        prop_assert!((w.x - x).abs() < 1e-12 && (w.y - y).abs() < 1e-9);
    }
}
