use nikodym_lab::combinatorics::{cosphere_theta, greedy_separated};
use nikodym_lab::distance::dist;
use nikodym_lab::fit::slope_fit;
use nikodym_lab::geodesic::{flow, PhasePoint};
use nikodym_lab::harness::{Experiment, ExperimentConfig};
use nikodym_lab::metric::{AlphaProfile, MetricPatch};
use proptest::prelude::*;

fn patch(choice: u8, k: u32) -> MetricPatch {
    let alpha = if k == 0 {
        AlphaProfile::exp_flat()
    } else {
        AlphaProfile::monomial(k).unwrap()
    };
    match choice % 3 {
        0 => MetricPatch::three_d(alpha),
        1 => MetricPatch::odd_focus(5, alpha),
        _ => MetricPatch::even_focus(4, alpha),
    }
    .unwrap()
}

fn point(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

fn chart_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slope_fit_recovers_power_laws(s in -3.0f64..3.0, c in 0.01f64..100.0, j0 in -12i32..0) {
        let pts: Vec<(f64, f64)> = (j0..j0 + 5).map(|j| {
            let t = 2f64.powi(j);
            (t, c * t.powf(s))
        }).collect();
        let fit = slope_fit(&pts).unwrap();
        prop_assert!((fit.slope - s).abs() < 1e-9);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
        prop_assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn cometric_inverts_metric_and_symbol_is_homogeneous(
        choice in 0u8..3, k in 0u32..4, x in point(5, 0.8), xi in point(5, 2.0), t in -3.0f64..3.0,
    ) {
        let p = patch(choice, k);
        let n = p.dim();
        let (x, xi) = (&x[..n], &xi[..n]);
        prop_assume!(p.in_domain(x));
        let prod = p.cometric(x).unwrap() * p.metric(x).unwrap();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((prod[(i, j)] - target).abs() < 1e-10);
            }
        }
        let scaled: Vec<f64> = xi.iter().map(|v| t * v).collect();
        let h = p.hamiltonian(x, xi).unwrap();
        prop_assert!((p.hamiltonian(x, &scaled).unwrap() - t.abs() * h).abs() < 1e-10 * (1.0 + h));
        prop_assert!(p.volume_density(x).unwrap() >= 1.0);
    }

    #[test]
    fn flow_is_reversible(choice in 0u8..3, k in 1u32..3, x in point(5, 0.5), xi in point(5, 1.0)) {
        let p = patch(choice, k);
        let n = p.dim();
        prop_assume!(xi[..n].iter().map(|v| v * v).sum::<f64>() > 0.01);
        prop_assume!(p.in_domain(&x[..n]));
        let start = PhasePoint::on_cosphere(&p, x[..n].to_vec(), xi[..n].to_vec()).unwrap();
        let fwd = flow(&p, &start, (0.0, 0.2), 1e-3).unwrap();
        let end = fwd.last();
        let back_start = PhasePoint::new(end.x.clone(), end.xi.iter().map(|v| -v).collect());
        let back = flow(&p, &back_start, (0.0, 0.2), 1e-3).unwrap();
        let home = back.last();
        prop_assert!(chart_dist(&home.x, &start.x) < 1e-9);
        let flipped: Vec<f64> = home.xi.iter().map(|v| -v).collect();
        prop_assert!(chart_dist(&flipped, &start.xi) < 1e-9);
        prop_assert!(fwd.max_drift(&p) < 1e-8);
    }

    #[test]
    fn cosphere_theta_is_symmetric(x in point(3, 0.4), xi in point(3, 1.0), y in point(3, 0.4), eta in point(3, 1.0)) {
        prop_assume!(xi.iter().map(|v| v * v).sum::<f64>() > 0.01 && eta.iter().map(|v| v * v).sum::<f64>() > 0.01);
        let p = patch(0, 1);
        let a = flow(&p, &PhasePoint::on_cosphere(&p, x, xi).unwrap(), (-0.1, 0.1), 1e-2).unwrap();
        let b = flow(&p, &PhasePoint::on_cosphere(&p, y, eta).unwrap(), (-0.1, 0.1), 1e-2).unwrap();
        let ab = cosphere_theta(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - cosphere_theta(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(cosphere_theta(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn greedy_selection_is_separated_and_maximal(
        pts in prop::collection::vec(point(3, 1.0), 1..120), spacing in 0.05f64..0.6,
    ) {
        let chosen = greedy_separated(&pts, spacing);
        for (i, &a) in chosen.iter().enumerate() {
            for &b in &chosen[i + 1..] {
                prop_assert!(chart_dist(&pts[a], &pts[b]) >= spacing);
            }
        }
        for q in &pts {
            prop_assert!(chosen.iter().any(|&c| chart_dist(&pts[c], q) < spacing));
        }
    }

    #[test]
    fn config_survives_toml(
        exp in 0usize..8, n in 3usize..8, k in 0u32..5, seed in any::<u64>(),
        samples in 100usize..100_000, p in 1.01f64..6.0, q in 1.01f64..2.0, plots in any::<bool>(),
    ) {
        let cfg = ExperimentConfig {
            experiment: Experiment::SINGLE.iter().copied().chain([Experiment::All]).nth(exp).unwrap(),
            n, k, seed, samples, p, q, plots,
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn distance_is_symmetric(x in point(3, 0.3), y in point(3, 0.3)) {
        prop_assume!(chart_dist(&x, &y) > 0.05);
        let p = patch(0, 1);
        let xy = dist(&p, &x, &y).unwrap().length;
        let yx = dist(&p, &y, &x).unwrap().length;
        prop_assert!((xy - yx).abs() < 1e-7 * (1.0 + xy));
        prop_assert!(xy > 0.0);
    }
}
