use certreach::expr::ExprPool;
use certreach::system::{build_residuals, SystemSpec};
use certreach::train::*;
use certreach::valuenet::{NetConfig, ValueNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYSTEM: &str = include_str!("../../../data/double_integrator/system.toml");

fn spec() -> SystemSpec {
    SystemSpec::from_toml_str(SYSTEM).unwrap()
}

fn net(seed: u64, omega: f64) -> ValueNet {
    let cfg = NetConfig { omega, seed, ..NetConfig::new(2) };
    ValueNet::new(cfg).unwrap()
}

fn random_batch(spec: &SystemSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            t: if i % 4 == 0 { spec.t1 } else { rng.gen_range(spec.t0..spec.t1) },
            x: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        })
        .collect()
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let spec = spec();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for trial in 0..40 {
        let mut net = net(trial, 3.0);
        let batch = random_batch(&spec, 16, &mut rng);
        let mut ev = LossEvaluator::new(&spec).unwrap();
        let (_, grad, _) = ev.objective(&net, &batch, 1.0, 0.3).unwrap();
        for _ in 0..32 {
            let k = rng.gen_range(0..net.num_params());
            let h = 1e-6;
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let (lp, _, _) = ev.objective(&net, &batch, 1.0, 0.3).unwrap();
            net.params_mut()[k] = orig - h;
            let (lm, _, _) = ev.objective(&net, &batch, 1.0, 0.3).unwrap();
            net.params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / (1.0 + fd.abs());
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked >= 1000);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn trainer_residual_matches_symbolic_residual() {
    let spec = spec();
    let net = net(3, 30.0);
    let mut pool: ExprPool = spec.pool().clone();
    let v = net.to_expr(&mut pool).unwrap();
    let res = build_residuals(&spec, pool, v).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random_batch(&spec, 1000, &mut rng);
    let terms = LossEvaluator::new(&spec).unwrap().loss_terms(&net, &batch).unwrap();
    let nvars = res.pool.num_vars();
    for (s, r2) in batch.iter().zip(&terms.r2) {
        let mut vars = vec![0.0; nvars];
        vars[0] = s.t;
        vars[1..3].copy_from_slice(&s.x);
        let sym = res.pool.eval_point(res.r2, &vars).unwrap();
        assert!((sym - r2).abs() <= 1e-9, "{sym} vs {r2}");
    }
}

#[test]
fn constant_net_has_zero_pde_loss() {
    let spec = spec();
    let cfg = NetConfig::new(2);
    let mut params = vec![0.0; cfg.num_params()];
    *params.last_mut().unwrap() = 0.7;
    let net = ValueNet::from_params(cfg, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(&spec, 64, &mut rng);
    let (l1, l2) = loss_terms(&net, &spec, &batch).unwrap();
    assert!(l2.iter().all(|&v| v == 0.0));
    for (s, l) in batch.iter().zip(&l1) {
        let g = s.x[0] * s.x[0] + s.x[1] * s.x[1] - 0.5;
        let want = if s.t == spec.t1 { (0.7 - g).abs() } else { 0.0 };
        assert!((l - want).abs() < 1e-15);
    }
}

#[test]
fn sampling_policies() {
    let spec = spec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = TrainConfig { batch_size: 4, ..TrainConfig::default() };
    let b = sample_batch(&cfg, Phase::Pretraining, &spec, None, &mut rng);
    assert_eq!(b.len(), 4);
    assert!(b.iter().all(|s| s.t == spec.t1));
    let b = sample_batch(&cfg, Phase::Curriculum { t_current: spec.t1 }, &spec, None, &mut rng);
    assert!(b.iter().all(|s| s.t == spec.t1));

    let cfg = TrainConfig { batch_size: 100, ..TrainConfig::default() };
    let cex = Counterexample { t: 0.5, x: vec![0.9, -0.2], boundary: false };
    let b = sample_batch(&cfg, Phase::Finetune { patience: 0 }, &spec, Some(&cex), &mut rng);
    let inside = |s: &Sample| {
        (s.t - 0.5).abs() <= 0.1 && s.x[0] >= 0.7 && s.x[0] <= 1.0 && (s.x[1] + 0.2).abs() <= 0.2
    };
    assert!(b[..10].iter().all(inside));
    assert!(b.iter().all(|s| s.x.iter().all(|v| (-1.0..=1.0).contains(v))));
    assert!(b.iter().all(|s| (spec.t0..=spec.t1).contains(&s.t)));

    let edge = Counterexample { boundary: true, t: 1.0, ..cex };
    let b = sample_batch(&cfg, Phase::Finetune { patience: 0 }, &spec, Some(&edge), &mut rng);
    assert!(b[..10].iter().all(|s| s.t == spec.t1 && s.x[0] >= 0.7));

    let cfg = TrainConfig { batch_size: 100, terminal_fraction: 0.2, ..TrainConfig::default() };
    let b = sample_batch(&cfg, Phase::Finetune { patience: 0 }, &spec, None, &mut rng);
    assert_eq!(b.iter().filter(|s| s.t == spec.t1).count(), 20);
}

#[test]
fn trivial_thresholds_walk_through_all_phases() {
    let spec = spec();
    let cfg = TrainConfig {
        batch_size: 8,
        eps1: f64::INFINITY,
        eps2: f64::INFINITY,
        time_step: Some(1.0),
        patience: 2,
        ..TrainConfig::default()
    };
    let out = run_curriculum(net(0, 30.0), &spec, &cfg).unwrap();
    assert_eq!(out.status, TrainStatus::Converged);
    let phases: Vec<&str> = out.log.iter().map(|r| r.phase.as_str()).collect();
    assert_eq!(phases, ["pretraining", "curriculum", "finetune", "finetune", "finetune"]);
    assert_eq!(out.final_phase, Phase::Finetune { patience: 3 });
}

#[test]
fn curriculum_is_monotone_and_reproducible() {
    let spec = spec();
    let cfg = TrainConfig {
        batch_size: 16,
        eps1: f64::INFINITY,
        eps2: 1e9,
        max_epochs: 30,
        patience: 1000,
        ..TrainConfig::default()
    };
    let a = run_curriculum(net(0, 30.0), &spec, &cfg).unwrap();
    let b = run_curriculum(net(0, 30.0), &spec, &cfg).unwrap();
    assert_eq!(a.status, TrainStatus::BudgetExhausted);
    let strip = |rows: &[LogRow]| rows.iter().map(|r| (r.phase.clone(), r.t_current, r.total_loss)).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
    assert_eq!(a.net.params(), b.net.params());
    let ts: Vec<f64> = a.log.iter().map(|r| r.t_current).collect();
    assert!(ts.windows(2).all(|w| w[1] <= w[0] && w[1] >= spec.t0));
    assert!(a.log.iter().any(|r| r.phase == "finetune"));
}

#[test]
fn budget_is_reported() {
    let spec = spec();
    let cfg = TrainConfig { batch_size: 8, eps1: 0.0 + f64::MIN_POSITIVE, max_epochs: 3, ..TrainConfig::default() };
    let out = run_curriculum(net(0, 30.0), &spec, &cfg).unwrap();
    assert_eq!(out.status, TrainStatus::BudgetExhausted);
    assert_eq!(out.final_phase, Phase::Pretraining);
    assert_eq!(out.epochs, 3);
}

#[test]
fn finetune_uses_its_own_lambda() {
    let spec = spec();
    let run = |lambda_finetune| {
        let cfg = TrainConfig { batch_size: 32, lambda: 0.5, lambda_finetune, ..TrainConfig::default() };
        let mut tr = Trainer::new(&spec, cfg, net(3, 30.0)).unwrap();
        tr.enter_finetune();
        for _ in 0..3 {
            tr.step().unwrap();
        }
        tr.net.params().to_vec()
    };
    assert_eq!(run(None), run(Some(0.5)));
    assert_ne!(run(None), run(Some(0.05)));
}
