use std::sync::Arc;

use certreach::certify::*;
use certreach::expr::{ExprPool, IntervalBox, Relation};
use certreach::system::{build_residuals, SystemSpec};
use certreach::valuenet::{NetConfig, ValueNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYSTEM: &str = include_str!("../../../data/double_integrator/system.toml");

fn one_dim_query(src: &str, relation: Relation, eps: f64) -> Query {
    let mut pool = ExprPool::with_vars(&["x"]);
    let e = certreach::expr::parse_infix(&mut pool, src).unwrap();
    let g = pool.differentiate(e, 0);
    let b = IntervalBox::from_bounds(&[(-1.0, 1.0)]).unwrap();
    Query::new(QueryLabel::R1Pos, relation, eps, Arc::new(pool), e, &[g], vec![0], b, vec![0.0], 1.0).unwrap()
}

fn small_net(seed: u64) -> ValueNet {
    ValueNet::new(NetConfig { hidden: vec![4], omega: 1.0, seed, ..NetConfig::new(2) }).unwrap()
}

fn sampled_max(q: &Query, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    (0..n)
        .map(|_| {
            let p: Vec<f64> = q.domain.dims().iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
            q.eval(&p).unwrap().abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn zero_residual_is_unsat_in_one_box() {
    let q = one_dim_query("0", Relation::Greater, 1e-3);
    let r = branch_and_prune(&q, &CertifierConfig::default()).unwrap();
    assert!(r.is_unsat());
    assert_eq!(r.boxes, 1);
}

#[test]
fn half_box_violation_yields_witness() {
    let q = one_dim_query("x", Relation::Greater, 0.5);
    let r = branch_and_prune(&q, &CertifierConfig::default()).unwrap();
    let w = r.witness().expect("witness");
    assert!(w.strict && w.x[0] > 0.5 && w.value > 0.5);
    let q = one_dim_query("x", Relation::Less, 0.5);
    let w = branch_and_prune(&q, &CertifierConfig::default()).unwrap().witness().cloned().unwrap();
    assert!(w.x[0] < -0.5);
}

#[test]
fn shared_subexpressions_cancel_exactly() {
    let q = one_dim_query("x^2 - x^2", Relation::Greater, 1e-6);
    let enc = q.pool().eval_interval(q.residual, &q.domain).unwrap();
    assert_eq!((enc.lo, enc.hi), (0.0, 0.0));
    assert!(branch_and_prune(&q, &CertifierConfig::default()).unwrap().is_unsat());
}

#[test]
fn query_dimensions() {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let res = network_residuals(&small_net(0), &spec).unwrap();
    let qs = build_queries(&res, &spec, 0.015, 0.285).unwrap();
    let labels: Vec<_> = qs.iter().map(|q| q.label.as_str()).collect();
    assert_eq!(labels, ["R1+", "R1-", "R2+", "R2-"]);
    assert_eq!(qs.iter().map(|q| q.domain.dim()).collect::<Vec<_>>(), [2, 2, 3, 3]);
    assert_eq!(qs.iter().map(|q| q.bound()).collect::<Vec<_>>(), [0.015, -0.015, 0.285, -0.285]);
    let same = build_queries(&res, &spec, 0.2, 0.2).unwrap();
    assert!(same.iter().all(|q| q.epsilon == 0.2));

    let one = SystemSpec::from_toml_str(
        "[system]\nstates=[\"x\"]\ncontrols=[\"u\"]\ndynamics=[\"u\"]\ntarget=\"x^2-0.1\"\nhorizon=1.0\ndomain=[[-1.0,1.0]]\ncontrol_box=[[-1.0,1.0]]\n",
    )
    .unwrap();
    let net = ValueNet::new(NetConfig { hidden: vec![3], ..NetConfig::new(1) }).unwrap();
    let qs = build_queries(&network_residuals(&net, &one).unwrap(), &one, 0.1, 0.1).unwrap();
    assert_eq!(qs[2].domain.dim(), 2);
}

#[test]
fn exact_value_with_zero_dynamics_certifies() {
    let text = SYSTEM.replace(r#"dynamics = ["x2", "u"]"#, r#"dynamics = ["0", "0*u"]"#);
    let spec = SystemSpec::from_toml_str(&text).unwrap();
    let pool = spec.pool().clone();
    let res = build_residuals(&spec, pool, spec.target()).unwrap();
    let qs = build_queries(&res, &spec, 1e-3, 1e-3).unwrap();
    let r = run_queries(&qs, &CertifierConfig::default()).unwrap();
    assert!(r.is_unsat(), "{:?}", r.verdict);
}

#[test]
fn unsat_is_sound_and_witnesses_are_valid() {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let cfg = CertifierConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let net = small_net(seed);
        let res = network_residuals(&net, &spec).unwrap();
        let probe = build_queries(&res, &spec, 1.0, 1.0).unwrap();
        let m1 = sampled_max(&probe[0], 20_000, &mut rng);
        let m2 = sampled_max(&probe[2], 20_000, &mut rng);

        let qs = build_queries(&res, &spec, 1.5 * m1 + 1e-3, 1.5 * m2 + 1e-3).unwrap();
        let r = run_queries(&qs, &cfg).unwrap();
        assert!(r.is_unsat(), "seed {seed}: {:?}", r.verdict);
        for q in &qs {
            for _ in 0..100_000 {
                let p: Vec<f64> = q.domain.dims().iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
                let v = q.eval(&p).unwrap();
                assert!(!q.relation.holds(v, q.bound()), "{} violated at {p:?}", q.label);
            }
        }

        let qs = build_queries(&res, &spec, 0.5 * m1, 0.5 * m2).unwrap();
        let r = run_queries(&qs, &cfg).unwrap();
        let w = r.witness().expect("witness below the sampled maximum");
        let q = qs.iter().find(|q| q.label == w.query).unwrap();
        let point: Vec<f64> = if w.query.is_boundary() { w.x.clone() } else { [vec![w.t], w.x.clone()].concat() };
        assert!(q.domain.contains(&point));
        let v = q.eval(&point).unwrap();
        assert_eq!(v, w.value);
        match q.relation {
            Relation::Greater => assert!(v >= q.bound() - cfg.delta),
            Relation::Less => assert!(v <= q.bound() + cfg.delta),
        }
    }
}

#[test]
fn single_worker_is_deterministic_and_monotone() {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let net = small_net(11);
    let cfg = CertifierConfig::default();
    let a = certify_network(&net, &spec, 0.05, 0.05, &cfg).unwrap();
    let b = certify_network(&net, &spec, 0.05, 0.05, &cfg).unwrap();
    assert_eq!(a.verdict, b.verdict);
    assert_eq!(a.boxes, b.boxes);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let res = network_residuals(&net, &spec).unwrap();
    let probe = build_queries(&res, &spec, 1.0, 1.0).unwrap();
    let (m1, m2) = (sampled_max(&probe[0], 20_000, &mut rng), sampled_max(&probe[2], 20_000, &mut rng));
    let base = certify_network(&net, &spec, 1.3 * m1 + 1e-3, 1.3 * m2 + 1e-3, &cfg).unwrap();
    assert!(base.is_unsat());
    for k in [1.1, 1.5, 3.0] {
        let r = certify_network(&net, &spec, k * (1.3 * m1 + 1e-3), k * (1.3 * m2 + 1e-3), &cfg).unwrap();
        assert!(r.is_unsat());
        assert!(r.boxes <= base.boxes);
    }
}

#[test]
fn parallel_workers_agree_on_verdict() {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let net = small_net(2);
    let serial = certify_network(&net, &spec, 10.0, 10.0, &CertifierConfig::default()).unwrap();
    let cfg = CertifierConfig { workers: 4, ..CertifierConfig::default() };
    let parallel = certify_network(&net, &spec, 10.0, 10.0, &cfg).unwrap();
    assert_eq!(serial.verdict, parallel.verdict);
    let tight = certify_network(&net, &spec, 1e-3, 1e-3, &cfg).unwrap();
    assert!(tight.witness().is_some());
}

#[test]
fn budget_exhaustion_is_reported() {
    let q = one_dim_query("sin(9*x)", Relation::Greater, 1.0 - 1e-9);
    let cfg = CertifierConfig { budget: 3, ..CertifierConfig::default() };
    let r = branch_and_prune(&q, &cfg).unwrap();
    match r.verdict {
        Verdict::BudgetExhausted(ref f) => assert!(f.open_boxes > 0 && f.open_volume > 0.0),
        other => panic!("{other:?}"),
    }
    let json = r.to_json(&cfg, 0.1, 0.2);
    assert_eq!(json["verdict"], "budget_exhausted");
    assert_eq!(json["config"]["budget"], 3);
}

#[test]
fn smtlib_files_are_written() {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let res = network_residuals(&small_net(0), &spec).unwrap();
    let qs = build_queries(&res, &spec, 0.015, 0.285).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_smtlib(&qs, dir.path()).unwrap();
    assert_eq!(paths.len(), 4);
    let r1 = std::fs::read_to_string(&paths[0]).unwrap();
    assert!(r1.contains("(declare-fun x1 () Real)"));
    assert!(!r1.contains("(declare-fun t () Real)"));
    assert!(r1.contains("0.015"));
    let r2 = std::fs::read_to_string(&paths[3]).unwrap();
    assert!(r2.contains("(declare-fun t () Real)") && r2.contains("(< "));
}
