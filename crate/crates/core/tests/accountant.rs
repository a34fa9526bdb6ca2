use dpfl::accountant::oracle::oracle_a_alpha;
use dpfl::accountant::*;
use proptest::prelude::*;

const QS: [f64; 3] = [0.01, 0.1, 0.5];
const SIGMAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const ALPHAS: [f64; 5] = [1.5, 2.0, 3.0, 8.0, 32.0];

fn p(q: f64, sigma: f64) -> SgmParams {
    SgmParams::new(q, sigma).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn closed_form(params: SgmParams, alpha: f64) -> f64 {
    if alpha.fract() == 0.0 {
        log_a_alpha_integer(params, alpha as u32).unwrap()
    } else {
        log_a_alpha_fractional(params, alpha, DEFAULT_SERIES_TOL).unwrap()
    }
}

#[test]
fn closed_forms_match_quadrature() {
    for q in QS {
        for s in SIGMAS {
            for a in ALPHAS {
                let est = oracle_a_alpha(p(q, s), a).unwrap();
                let got = closed_form(p(q, s), a);
                let tol = 1e-6 * got.abs().max(est.ln_a.abs());
                assert!(est.ln_a_error < tol, "quadrature too coarse at q={q} s={s} a={a}");
                assert!(rel(got, est.ln_a) < 1e-6, "q={q} s={s} a={a}: {got} vs {}", est.ln_a);
            }
        }
    }
}

#[test]
fn named_oracle_cases() {
    // z1 = 1/2 at q = 1/2
    let ctx = SgmAnalysisContext::new(p(0.5, 1.0)).unwrap();
    assert_eq!(ctx.z1(), 0.5);
    for (q, s, a) in [(0.5, 1.0, 2.5), (0.1, 1.0, 1.5), (0.5, 1.0, 2.0)] {
        let est = oracle_a_alpha(p(q, s), a).unwrap();
        assert!(rel(closed_form(p(q, s), a), est.ln_a) < 1e-6, "q={q} s={s} a={a}");
    }
    let a2 = log_a_alpha_integer(p(0.01, 1.0), 2).unwrap();
    let est = oracle_a_alpha(p(0.01, 1.0), 2.0).unwrap();
    assert!(rel(a2, est.ln_a) < 1e-6);
}

#[test]
fn quadrature_a_dominates_b() {
    for q in QS {
        for s in SIGMAS {
            for a in ALPHAS {
                let est = oracle_a_alpha(p(q, s), a).unwrap();
                assert!(
                    est.ln_a >= est.ln_b - est.ln_a_error - est.ln_b_error,
                    "q={q} s={s} a={a}: {est:?}"
                );
            }
        }
    }
}

#[test]
fn full_sampling_is_gaussian_mechanism() {
    for s in SIGMAS {
        for a in 2..=64u32 {
            let a = f64::from(a);
            let eps = sgm_rdp_step(p(1.0, s), a).unwrap().epsilon();
            assert!(rel(eps, a / (2.0 * s * s)) < 1e-9);
        }
    }
    assert_eq!(sgm_rdp_step(p(1.0, 2.0), 3.0).unwrap().epsilon(), 0.375);
}

#[test]
fn zero_sampling_costs_nothing() {
    for s in SIGMAS {
        for &a in AlphaGrid::default().orders() {
            assert_eq!(sgm_rdp_step(p(0.0, s), a).unwrap().epsilon(), 0.0);
        }
    }
}

#[test]
fn integer_and_fractional_forms_agree() {
    for q in QS {
        for s in SIGMAS {
            for a in 2..=64u32 {
                let i = log_a_alpha_integer(p(q, s), a).unwrap();
                let f = log_a_alpha_fractional(p(q, s), f64::from(a), DEFAULT_SERIES_TOL).unwrap();
                assert!(rel(i, f) < 1e-9, "q={q} s={s} a={a}: {i} vs {f}");
            }
        }
    }
}

#[test]
fn cost_is_monotone_in_rate_and_noise() {
    let grid = AlphaGrid::default();
    let qs = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0];
    for &a in grid.orders().iter().filter(|a| **a <= 64.0) {
        for s in SIGMAS {
            let eps: Vec<f64> = qs.iter().map(|&q| sgm_rdp_step(p(q, s), a).unwrap().epsilon()).collect();
            assert!(eps.windows(2).all(|w| w[0] <= w[1]), "q-monotonicity a={a} s={s}: {eps:?}");
        }
        for q in QS {
            let eps: Vec<f64> = SIGMAS.iter().map(|&s| sgm_rdp_step(p(q, s), a).unwrap().epsilon()).collect();
            assert!(eps.windows(2).all(|w| w[0] >= w[1]), "sigma-monotonicity a={a} q={q}: {eps:?}");
        }
    }
}

#[test]
fn log_moment_is_non_negative() {
    for q in QS {
        for s in SIGMAS {
            for &a in AlphaGrid::default().orders() {
                let e = sgm_rdp_step(p(q, s), a).unwrap().epsilon();
                assert!(e >= 0.0 && e.is_finite(), "q={q} s={s} a={a}");
            }
        }
    }
}

#[test]
fn composition_examples() {
    let pt = RdpPoint::new(2.0, 0.1).unwrap();
    let c = compose_steps(pt, 10).unwrap();
    assert!((c.epsilon() - 1.0).abs() < 1e-15);
    assert_eq!(compose_steps(RdpPoint::new(8.0, 0.0).unwrap(), 1000).unwrap().epsilon(), 0.0);
    let step = sgm_rdp_step(p(0.01, 1.0), 2.0).unwrap();
    let c = compose_steps(step, 500).unwrap();
    assert!((c.epsilon() - 0.0859).abs() < 1e-4);
    assert!(compose_steps(pt, 0).is_err());
}

#[test]
fn conversion_examples() {
    let d = rdp_to_dp(RdpPoint::new(32.0, 0.5).unwrap(), 1e-5).unwrap();
    assert!((d.epsilon - (0.5 + 1e5f64.ln() / 31.0)).abs() < 1e-15);
    assert!((d.epsilon - 0.87138).abs() < 1e-5);
    let d = rdp_to_dp(RdpPoint::new(2.0, 0.0).unwrap(), 0.5).unwrap();
    assert!((d.epsilon - 2f64.ln()).abs() < 1e-15);
    let d = rdp_to_dp(RdpPoint::new(2.0, 0.3).unwrap(), 1.0 - 1e-12).unwrap();
    assert!((d.epsilon - 0.3).abs() < 1e-11);
    assert!(rdp_to_dp(RdpPoint::new(2.0, 0.3).unwrap(), 1.0).is_err());
}

#[test]
fn best_budget_is_grid_minimum_for_gaussian_mechanism() {
    let grid = AlphaGrid::new((2..=64).map(f64::from).collect()).unwrap();
    let best = best_dp_budget(p(1.0, 1.0), 1, 1e-5, &grid).unwrap();
    let brute = (2..=64)
        .map(|a| {
            let a = f64::from(a);
            a / 2.0 + 1e5f64.ln() / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(rel(best.dp.epsilon, brute) < 1e-12, "{} vs {brute}", best.dp.epsilon);
}

#[test]
fn best_budget_without_sampling_uses_largest_order() {
    let grid = AlphaGrid::default();
    let best = best_dp_budget(p(0.0, 1.3), 100, 1e-5, &grid).unwrap();
    assert_eq!(best.alpha, 256.0);
    assert!(rel(best.dp.epsilon, 1e5f64.ln() / 255.0) < 1e-15);
}

#[test]
fn best_budget_is_below_every_order() {
    let grid = AlphaGrid::default();
    for (q, s, t) in [(0.01, 1.0, 1000u64), (0.1, 2.0, 50), (0.5, 4.0, 7)] {
        let best = best_dp_budget(p(q, s), t, 1e-5, &grid).unwrap();
        for &a in grid.orders() {
            let e = rdp_to_dp(compose_steps(sgm_rdp_step(p(q, s), a).unwrap(), t).unwrap(), 1e-5)
                .unwrap()
                .epsilon;
            assert!(best.dp.epsilon <= e);
        }
    }
}

#[test]
fn end_to_end_against_quadrature_pipeline() {
    let (q, s, t, delta) = (0.01, 1.0, 1000u64, 1e-5);
    let grid = AlphaGrid::default();
    let best = best_dp_budget(p(q, s), t, delta, &grid).unwrap();
    let oracle = grid
        .orders()
        .iter()
        .map(|&a| {
            let ln_a = oracle_a_alpha(p(q, s), a).unwrap().ln_a.max(0.0);
            t as f64 * ln_a / (a - 1.0) + (1.0 / delta).ln() / (a - 1.0)
        })
        .fold(f64::INFINITY, f64::min);
    assert!(rel(best.dp.epsilon, oracle) < 1e-4, "{} vs {oracle}", best.dp.epsilon);
}

#[test]
fn profile_table_lists_every_order() {
    let grid = AlphaGrid::default();
    let table = PrivacyProfile::new(p(0.05, 1.2), &grid).table(200, 1e-5).unwrap();
    assert_eq!(table.len(), grid.orders().len());
    let best = best_dp_budget(p(0.05, 1.2), 200, 1e-5, &grid).unwrap();
    let min = table
        .iter()
        .map(|(_, r)| r.as_ref().unwrap().dp_epsilon)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min, best.dp.epsilon);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(AlphaGrid::new(vec![]).is_err());
    assert!(AlphaGrid::new(vec![2.0, 1.5]).is_err());
    assert!(AlphaGrid::new(vec![1.0, 2.0]).is_err());
    assert!(sgm_rdp_step(p(0.1, 1.0), 1.0).is_err());
    assert!(best_dp_budget(p(0.1, 1.0), 0, 1e-5, &AlphaGrid::default()).is_err());
    assert!(best_dp_budget(p(0.1, 1.0), 10, 0.0, &AlphaGrid::default()).is_err());
}

proptest! {
    #[test]
    fn composition_is_exactly_linear(
        q in 0.0f64..=1.0,
        s in 0.3f64..8.0,
        alpha_idx in 0usize..72,
        a in 1u64..5000,
        b in 1u64..5000,
    ) {
        let alpha = AlphaGrid::default().orders()[alpha_idx];
        let step = sgm_rdp_step(p(q, s), alpha).unwrap();
        let once = compose_steps(step, a * b).unwrap();
        let twice = compose_steps(compose_steps(step, a).unwrap(), b).unwrap();
        prop_assert_eq!(once.epsilon().to_bits(), twice.epsilon().to_bits());
        prop_assert_eq!(once.alpha(), twice.alpha());
    }

    #[test]
    fn fractional_orders_converge(
        q in 0.001f64..0.999,
        s in 0.3f64..10.0,
        alpha in 1.01f64..64.0,
    ) {
        let v = log_a_alpha_fractional(p(q, s), alpha, DEFAULT_SERIES_TOL);
        prop_assert!(v.is_ok(), "{:?}", v);
        prop_assert!(v.unwrap() >= 0.0);
    }
}
