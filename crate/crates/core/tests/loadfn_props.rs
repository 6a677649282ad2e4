use geobalance::loadfn::{fit_empirical, l_max_from_budget, Kind, LoadFunction, PiecewiseLinear};
use proptest::prelude::*;

fn load_function() -> impl Strategy<Value = LoadFunction> {
    prop_oneof![
        (0.5f64..5.0, 0.1f64..0.95).prop_map(|(mu, frac)| LoadFunction::queuing(mu, mu * frac).unwrap()),
        (0.2f64..4.0, 1.0f64..50.0).prop_map(|(s, l_max)| LoadFunction::batch(s, l_max).unwrap()),
        (0.0f64..2.0, 0.0f64..2.0, 1.0f64..50.0).prop_map(|(a, b, l_max)| LoadFunction::affine(a, b, l_max).unwrap()),
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 2.0f64..20.0).prop_map(|(a, b, d, top)| {
            let points = (0..7)
                .map(|p| {
                    let l = if p == 6 { top } else { top * p as f64 / 6.0 };
                    (l, a + b * l + d * l * l)
                })
                .collect();
            LoadFunction::new(Kind::Empirical(PiecewiseLinear::new(points).unwrap()), top).unwrap()
        }),
    ]
}

proptest! {
    #[test]
    fn processing_time_and_marginal_are_nondecreasing(lf in load_function(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (x, y) = (a.min(b) * lf.l_max(), a.max(b) * lf.l_max());
        prop_assert!(lf.eval_f(x).unwrap() <= lf.eval_f(y).unwrap());
        prop_assert!(lf.eval_marginal(x).unwrap() <= lf.eval_marginal(y).unwrap() + 1e-12);
    }

    #[test]
    fn marginal_is_the_slope_of_total_time(lf in load_function(), a in 0.01f64..0.99) {
        let l = a * lf.l_max();
        let h = 1e-6 * l.min(lf.l_max() - l);
        let numeric = (lf.eval_total(l + h).unwrap() - lf.eval_total(l - h).unwrap()) / (2.0 * h);
        let analytic = lf.eval_marginal(l).unwrap();
        let kinked = match lf.kind() {
            Kind::Empirical(pw) => pw.points().iter().any(|p| (p.0 - l).abs() <= h),
            _ => false,
        };
        if !kinked {
            prop_assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0), "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn bounds_dominate_derivatives(lf in load_function(), a in 0.0f64..1.0) {
        let b = lf.derivative_bounds();
        let l = a * lf.l_max();
        prop_assert!(lf.eval_derivative(l).unwrap() <= b.u1 + 1e-9);
        prop_assert!(lf.eval_second_derivative(l).unwrap().abs() <= b.u2 + 1e-9);
    }

    #[test]
    fn fitting_batch_samples_reproduces_them(s in 0.2f64..4.0, top in 1.0f64..50.0, n in 2usize..10) {
        let batch = LoadFunction::batch(s, top).unwrap();
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|p| {
                let l = if p == n - 1 { top } else { top * p as f64 / (n - 1) as f64 };
                (l, batch.eval_f(l).unwrap())
            })
            .collect();
        let fit = fit_empirical(&samples).unwrap();
        prop_assert_eq!(fit.l_max(), top);
        for &(l, t) in &samples {
            prop_assert_eq!(fit.eval_f(l).unwrap(), t);
        }
    }

    #[test]
    fn budget_limit_stays_within_budget(mu in 0.5f64..5.0, s in 0.2f64..4.0, t_max in 0.5f64..10.0) {
        for kind in [Kind::Queuing { mu }, Kind::Batch { s }] {
            let Ok(l_max) = l_max_from_budget(&kind, t_max) else { continue };
            let lf = LoadFunction::new(kind, l_max).unwrap();
            let t = lf.eval_f(l_max).unwrap();
            prop_assert!(t <= t_max * (1.0 + 1e-9));
            prop_assert!(t >= t_max * (1.0 - 1e-6));
        }
    }
}
