use approx::assert_relative_eq;
use avgfilt::model::{build_diffusion_spectrum, weighted_norm_sq};
use avgfilt::oracle::{bias_sq_closed, var_closed};
use avgfilt::rates::fit_slope;
use avgfilt::{OperatorRep, ProblemSpec, RegFilterParams, ResultRow, ResultTable};
use proptest::prelude::*;

proptest! {
    #[test]
    fn r_sums_to_alpha_q(n in 1u64..200, alpha in 1e-3f64..1e2, lambda in 1e-4f64..1e2) {
        let mut sum = 0.0;
        for k in 1..=n {
            sum += RegFilterParams::new(k, alpha).unwrap().r(lambda).unwrap();
        }
        let q = RegFilterParams::new(n, alpha).unwrap().q(lambda).unwrap();
        prop_assert!((sum - alpha * q).abs() <= 1e-10 * (alpha * q).max(1.0));
    }

    #[test]
    fn filter_values_respect_bounds(
        n in 1u64..10_000,
        alpha in 1e-3f64..10.0,
        p in 0.0f64..3.0,
        lambda in 0.0f64..1.0,
    ) {
        let f = RegFilterParams::new(n, alpha).unwrap();
        let r = f.r(lambda).unwrap();
        let q = f.q(lambda).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(q >= 0.0 && q <= n as f64 / alpha * (1.0 + 1e-12));
        prop_assert!(lambda.powf(p) * r <= f.r_bound(p, 1.0).unwrap() * (1.0 + 1e-9));
        prop_assert!(lambda.powf(p) * q <= f.q_bound(p, 1.0).unwrap() * (1.0 + 1e-9));
    }

    #[test]
    fn r_is_monotone(n in 1u64..1000, alpha in 1e-2f64..10.0, lambda in 1e-3f64..1.0, step in 1e-3f64..1.0) {
        let f = RegFilterParams::new(n, alpha).unwrap();
        let g = RegFilterParams::new(n + 1, alpha).unwrap();
        prop_assert!(f.r(lambda + step).unwrap() <= f.r(lambda).unwrap());
        prop_assert!(g.r(lambda).unwrap() <= f.r(lambda).unwrap());
    }

    #[test]
    fn weighted_norm_is_quadratic(c in -10.0f64..10.0, t in 0.0f64..3.0, x in prop::collection::vec(-1.0f64..1.0, 8)) {
        let op = OperatorRep::Diagonal(build_diffusion_spectrum(8).unwrap());
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let base = weighted_norm_sq(&op, &x, t).unwrap();
        let norm = weighted_norm_sq(&op, &scaled, t).unwrap();
        prop_assert!((norm - c * c * base).abs() <= 1e-12 * norm.max(1e-300));
    }

    #[test]
    fn fitted_slope_ignores_scale(slope in -3.0f64..1.0, scale in 1e-6f64..1e6) {
        let pts: Vec<(f64, f64)> = (0..20).map(|i| {
            let n = 10f64.powf(1.0 + i as f64 / 10.0);
            (n, n.powf(slope))
        }).collect();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, v)| (n, scale * v)).collect();
        let a = fit_slope(&pts, (10.0, 1e3)).unwrap();
        let b = fit_slope(&scaled, (10.0, 1e3)).unwrap();
        prop_assert!((a.fitted_slope - slope).abs() < 1e-9);
        prop_assert!((a.fitted_slope - b.fitted_slope).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
        let rows = values.iter().enumerate().map(|(i, &v)| {
            ResultRow::point("scalar", 0.5, i as u64 + 1, "s", v).with_ci(v - 1.0, v + 1.0)
        }).collect();
        let table = ResultTable::new(rows);
        let back = ResultTable::from_json(&table.to_json()).unwrap();
        prop_assert_eq!(back, table);
    }
}

#[test]
fn bias_scales_with_initial_error_and_variance_with_gamma() {
    let op = OperatorRep::Diagonal(build_diffusion_spectrum(16).unwrap());
    let u0: Vec<f64> = (1..=16).map(|k| 1.0 / k as f64).collect();
    let spec = ProblemSpec::new(op, vec![0.0; 16], u0.clone(), 0.1, 0.01, 1.0).unwrap();
    let doubled = ProblemSpec { u0: u0.iter().map(|v| 2.0 * v).collect(), ..spec.clone() };
    assert_relative_eq!(bias_sq_closed(&doubled, 50).unwrap(), 4.0 * bias_sq_closed(&spec, 50).unwrap(), max_relative = 1e-12);
    assert_relative_eq!(
        var_closed(&spec.with_gamma(0.3), 50).unwrap(),
        9.0 * var_closed(&spec, 50).unwrap(),
        max_relative = 1e-12
    );
}
