use dpfl::accountant::{best_dp_budget, AlphaGrid, SgmParams};
use dpfl::dp_sgd::{dp_sgd_step, DpSgdConfig, RngStream};
use dpfl::federated::*;
use dpfl::models::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn client_data(seed: u64, n: usize) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let label = if x[0] - x[1] > 0.0 { Label::Tumor } else { Label::Normal };
            LabeledSample::new(x, label)
        })
        .collect()
}

fn cfg(dp: DpSgdConfig, n: u32, e: u32) -> FlConfig {
    FlConfig {
        n_rounds: n,
        local_steps: e,
        dp,
        arch: ArchitectureSpec::logistic(2).unwrap(),
        master_seed: 17,
    }
}

fn full_batch_step(p: &ModelParams, data: &[LabeledSample], eta: f64) -> ModelParams {
    let mut g = vec![0.0; p.theta().len()];
    for s in data {
        for (a, b) in g.iter_mut().zip(per_sample_gradient(p, s).unwrap()) {
            *a += b / data.len() as f64;
        }
    }
    let theta = p.theta().iter().zip(&g).map(|(t, v)| t - eta * v).collect();
    ModelParams::new(p.spec(), theta).unwrap()
}

#[test]
fn one_round_noise_free_is_two_gradient_steps() {
    let (d1, d2) = (client_data(1, 12), client_data(2, 9));
    let c = cfg(DpSgdConfig::new(1.0, 0.3, 0.0, 1e9).unwrap(), 1, 1);
    let run = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    let expected = full_batch_step(&full_batch_step(&initial_params(&c), &d1, 0.3), &d2, 0.3);
    for (a, b) in run.params.theta().iter().zip(expected.theta()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(run.budget.epsilon.is_infinite());
    assert_eq!(run.alpha, None);
}

#[test]
fn noise_free_run_is_alternating_gradient_descent() {
    let (d1, d2) = (client_data(3, 15), client_data(4, 15));
    let c = cfg(DpSgdConfig::new(1.0, 0.2, 0.0, 1e9).unwrap(), 10, 1);
    let run = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    let mut p = initial_params(&c);
    for _ in 0..10 {
        p = full_batch_step(&p, &d1, 0.2);
        p = full_batch_step(&p, &d2, 0.2);
    }
    for (a, b) in run.params.theta().iter().zip(p.theta()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn runs_are_reproducible() {
    let (d1, d2) = (client_data(5, 30), client_data(6, 30));
    let c = cfg(DpSgdConfig::new(0.3, 0.5, 1.2, 1.0).unwrap(), 4, 3);
    let a = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    let b = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.params.theta().iter().zip(b.params.theta()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let other = run_cyclic_fl(&FlConfig { master_seed: 18, ..c }, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn handoff_is_a_plain_value_copy() {
    let (d1, d2) = (client_data(7, 20), client_data(8, 25));
    let c = cfg(DpSgdConfig::new(0.4, 0.5, 1.0, 1.0).unwrap(), 3, 4);
    let run = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    let mut p = initial_params(&c);
    for round in 1..=3 {
        for (id, data) in [(1u8, &d1), (2u8, &d2)] {
            for step in 0..4 {
                p = dp_sgd_step(&p, data, &c.dp, RngStream::for_step(17, id, round, step)).unwrap();
            }
        }
    }
    assert_eq!(run.params, p);
}

#[test]
fn transcript_follows_protocol_order() {
    let (d1, d2) = (client_data(9, 10), client_data(10, 10));
    let c = cfg(DpSgdConfig::new(0.5, 0.1, 1.0, 1.0).unwrap(), 3, 5);
    let run = run_cyclic_fl(&c, &d1, &d2, 1e-5, &AlphaGrid::default()).unwrap();
    let got: Vec<(u32, u8, u32)> = run.transcript.iter().map(|t| (t.round, t.client, t.steps)).collect();
    assert_eq!(got, vec![(1, 1, 5), (1, 2, 5), (2, 1, 5), (2, 2, 5), (3, 1, 5), (3, 2, 5)]);
}

#[test]
fn budget_equals_single_client_accounting() {
    let grid = AlphaGrid::default();
    let c = cfg(DpSgdConfig::new(0.05, 0.1, 1.2, 1.0).unwrap(), 10, 20);
    let fl = per_client_budget(&c, 1e-5, &grid).unwrap();
    let single = best_dp_budget(SgmParams::new(0.05, 1.2).unwrap(), 200, 1e-5, &grid).unwrap();
    assert_eq!(fl, single.dp);
    let run = run_cyclic_fl(&c, &client_data(1, 10), &client_data(2, 10), 1e-5, &grid).unwrap();
    assert_eq!(run.budget, single.dp);
    assert_eq!(run.alpha, Some(single.alpha));
}

#[test]
fn budget_depends_only_on_total_steps() {
    let grid = AlphaGrid::default();
    let dp = DpSgdConfig::new(0.1, 0.1, 1.5, 1.0).unwrap();
    let a = per_client_budget(&cfg(dp, 2, 50), 1e-5, &grid).unwrap();
    let b = per_client_budget(&cfg(dp, 100, 1), 1e-5, &grid).unwrap();
    let c = per_client_budget(&cfg(dp, 1, 100), 1e-5, &grid).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn budget_grows_with_total_steps() {
    let grid = AlphaGrid::default();
    let dp = DpSgdConfig::new(0.05, 0.1, 1.0, 1.0).unwrap();
    let eps: Vec<f64> = [1u32, 2, 5, 10, 50, 100, 500]
        .iter()
        .map(|&n| per_client_budget(&cfg(dp, n, 4), 1e-5, &grid).unwrap().epsilon)
        .collect();
    assert!(eps.windows(2).all(|w| w[0] <= w[1]), "{eps:?}");
}

#[test]
fn zero_rate_limit() {
    let grid = AlphaGrid::default();
    let dp = DpSgdConfig {
        q: 0.0,
        eta: 0.1,
        sigma: 1.0,
        clip_c: 1.0,
    };
    let (budget, alpha) = client_budget(&dp, 100, 1e-5, &grid).unwrap();
    assert_eq!(alpha, Some(256.0));
    assert_eq!(budget.epsilon, 1e5f64.ln() / 255.0);
}
