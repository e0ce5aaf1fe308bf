use certreach::expr::{ExprId, ExprPool, Interval, IntervalBox};
use certreach::system::SystemSpec;
use certreach::valuenet::{NetConfig, ValueNet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: usize = 2;

#[derive(Clone, Debug)]
enum Recipe {
    Var(usize),
    Const(f64),
    Neg(Box<Recipe>),
    Sin(Box<Recipe>),
    Cos(Box<Recipe>),
    Exp(Box<Recipe>),
    Abs(Box<Recipe>),
    Powi(Box<Recipe>, u32),
    Add(Box<Recipe>, Box<Recipe>),
    Sub(Box<Recipe>, Box<Recipe>),
    Mul(Box<Recipe>, Box<Recipe>),
    Div(Box<Recipe>, Box<Recipe>),
    Min(Box<Recipe>, Box<Recipe>),
    Max(Box<Recipe>, Box<Recipe>),
    IfLe(Box<Recipe>, Box<Recipe>, Box<Recipe>, Box<Recipe>),
}

fn leaf() -> impl Strategy<Value = Recipe> {
    prop_oneof![
        3 => (0..VARS).prop_map(Recipe::Var),
        1 => (-2.0..2.0f64).prop_map(Recipe::Const),
    ]
}

/// Expressions over every operator; `smooth` drops the kinked ones and
/// division.
fn recipe(smooth: bool) -> impl Strategy<Value = Recipe> {
    leaf().prop_recursive(4, 24, 4, move |inner| {
        let b = |r: Recipe| Box::new(r);
        let mut ops: Vec<BoxedStrategy<Recipe>> = vec![
            inner.clone().prop_map(move |a| Recipe::Neg(b(a))).boxed(),
            inner.clone().prop_map(move |a| Recipe::Sin(b(a))).boxed(),
            inner.clone().prop_map(move |a| Recipe::Cos(b(a))).boxed(),
            inner.clone().prop_map(move |a| Recipe::Exp(b(a))).boxed(),
            (inner.clone(), 0..4u32).prop_map(move |(a, n)| Recipe::Powi(b(a), n)).boxed(),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Add(b(x), b(y))).boxed(),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Sub(b(x), b(y))).boxed(),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Mul(b(x), b(y))).boxed(),
        ];
        if !smooth {
            ops.push(inner.clone().prop_map(move |a| Recipe::Abs(b(a))).boxed());
            ops.push((inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Div(b(x), b(y))).boxed());
            ops.push((inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Min(b(x), b(y))).boxed());
            ops.push((inner.clone(), inner.clone()).prop_map(move |(x, y)| Recipe::Max(b(x), b(y))).boxed());
            ops.push(
                (inner.clone(), inner.clone(), inner.clone(), inner.clone())
                    .prop_map(move |(l, r, x, y)| Recipe::IfLe(b(l), b(r), b(x), b(y)))
                    .boxed(),
            );
        }
        proptest::strategy::Union::new(ops)
    })
}

fn build(pool: &mut ExprPool, r: &Recipe) -> ExprId {
    match r {
        Recipe::Var(i) => pool.var(*i).unwrap(),
        Recipe::Const(c) => pool.constant(*c),
        Recipe::Neg(a) => {
            let a = build(pool, a);
            pool.neg(a)
        }
        Recipe::Sin(a) => {
            let a = build(pool, a);
            pool.sin(a)
        }
        Recipe::Cos(a) => {
            let a = build(pool, a);
            pool.cos(a)
        }
        Recipe::Exp(a) => {
            let a = build(pool, a);
            pool.exp(a)
        }
        Recipe::Abs(a) => {
            let a = build(pool, a);
            pool.abs(a)
        }
        Recipe::Powi(a, n) => {
            let a = build(pool, a);
            pool.powi(a, *n)
        }
        Recipe::Add(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.add(x, y)
        }
        Recipe::Sub(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.sub(x, y)
        }
        Recipe::Mul(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.mul(x, y)
        }
        Recipe::Div(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.div(x, y)
        }
        Recipe::Min(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.min(x, y)
        }
        Recipe::Max(x, y) => {
            let (x, y) = (build(pool, x), build(pool, y));
            pool.max(x, y)
        }
        Recipe::IfLe(l, r, x, y) => {
            let (l, r, x, y) = (build(pool, l), build(pool, r), build(pool, x), build(pool, y));
            pool.if_le(l, r, x, y)
        }
    }
}

fn vars_pool(shared: bool) -> ExprPool {
    let mut p = if shared { ExprPool::new() } else { ExprPool::without_sharing() };
    p.declare_var("a");
    p.declare_var("b");
    p
}

fn boxes() -> impl Strategy<Value = [(f64, f64); VARS]> {
    let dim = (-2.0..2.0f64, 0.0..1.5f64).prop_map(|(lo, w)| (lo, lo + w));
    [dim.clone(), dim]
}

fn point_in(b: &[(f64, f64)], frac: &[f64]) -> Vec<f64> {
    b.iter().zip(frac).map(|(&(lo, hi), f)| (lo + f * (hi - lo)).min(hi)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, failure_persistence: None, ..ProptestConfig::default() })]

    // 10 points per case: 10⁵ (expr, box, point) triples.
    #[test]
    fn interval_evaluation_encloses_point_evaluation(
        r in recipe(false),
        b in boxes(),
        fracs in proptest::collection::vec([0.0..=1.0f64, 0.0..=1.0f64], 10),
    ) {
        let mut pool = vars_pool(true);
        let e = build(&mut pool, &r);
        let domain = IntervalBox::from_bounds(&b).unwrap();
        let Ok(enc) = pool.eval_interval(e, &domain) else { return Ok(()) };
        for f in &fracs {
            let p = point_in(&b, f);
            if let Ok(v) = pool.eval_point(e, &p) {
                if v.is_finite() {
                    prop_assert!(enc.contains(v), "{} at {:?} = {} not in {:?}", pool.display(e), p, v, enc);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sharing_does_not_change_values(r in recipe(false), b in boxes(), f in [0.0..=1.0f64, 0.0..=1.0f64]) {
        let mut shared = vars_pool(true);
        let mut plain = vars_pool(false);
        let es = build(&mut shared, &r);
        let ep = build(&mut plain, &r);
        prop_assert!(shared.len() <= plain.len());
        let p = point_in(&b, &f);
        let (vs, vp) = (shared.eval_point(es, &p), plain.eval_point(ep, &p));
        match (vs, vp) {
            // Same reals; folding may flip the sign of a zero.
            (Ok(a), Ok(c)) if c.is_finite() => prop_assert!(a == c, "{a} vs {c}"),
            (Ok(_), Ok(_)) => {}
            (a, c) => prop_assert_eq!(a.is_err(), c.is_err()),
        }
        let domain = IntervalBox::from_bounds(&b).unwrap();
        match (shared.eval_interval(es, &domain), plain.eval_interval(ep, &domain)) {
            // Shared subterms may cancel exactly (x - x = 0), so sharing can only tighten.
            (Ok(a), Ok(c)) => prop_assert!(c.lo <= a.lo && a.hi <= c.hi, "{:?} not within {:?}", a, c),
            (Ok(_), Err(_)) | (Err(_), Err(_)) => {}
            (Err(e), Ok(c)) => prop_assert!(false, "shared failed ({e}) where unshared gave {:?}", c),
        }
    }

    #[test]
    fn symbolic_derivative_matches_finite_differences(r in recipe(true), x in -1.0..1.0f64, y in -1.0..1.0f64, var in 0..VARS) {
        let mut pool = vars_pool(true);
        let e = build(&mut pool, &r);
        let d = pool.differentiate(e, var);
        let p = [x, y];
        let h = 1e-5;
        let mut plus = p;
        let mut minus = p;
        plus[var] += h;
        minus[var] -= h;
        let fd = (pool.eval_point(e, &plus).unwrap() - pool.eval_point(e, &minus).unwrap()) / (2.0 * h);
        let exact = pool.eval_point(d, &p).unwrap();
        prop_assume!(exact.is_finite() && fd.is_finite() && exact.abs() < 1e6);
        prop_assert!((exact - fd).abs() <= 1e-4 * (1.0 + fd.abs()), "{}: {exact} vs {fd}", pool.display(e));
    }
}

fn probe_nets() -> Vec<ValueNet> {
    let mut nets = Vec::new();
    for (k, omega) in [1.0, 3.0, 10.0, 30.0].into_iter().enumerate() {
        for seed in 0..3 {
            let mut cfg = NetConfig::new(2);
            cfg.omega = omega;
            cfg.seed = seed + 10 * k as u64;
            if seed == 2 {
                cfg.hidden = vec![8, 8];
                cfg.degree = 3;
            }
            nets.push(ValueNet::new(cfg).unwrap());
        }
    }
    nets
}

fn random_points(n: usize, seed: u64) -> Vec<(f64, [f64; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen_range(0.0..1.0), [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])).collect()
}

/// Fourth-order central difference.
fn fd4(f: impl Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (f(z - 2.0 * h) - 8.0 * f(z - h) + 8.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h)
}

#[test]
fn input_gradients_match_finite_differences() {
    let nets = probe_nets();
    let points = random_points(100, 1);
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for net in &nets {
        let h = 1e-3 / net.config().omega;
        for (t, x) in &points {
            let (dt, dx) = net.input_gradients(*t, x).unwrap();
            let fd_t = fd4(|s| net.forward(s, x).unwrap(), *t, h);
            worst = worst.max((dt - fd_t).abs() / (1.0 + fd_t.abs()));
            for i in 0..2 {
                let fd = fd4(
                    |s| {
                        let mut y = *x;
                        y[i] = s;
                        net.forward(*t, &y).unwrap()
                    },
                    x[i],
                    h,
                );
                worst = worst.max((dx[i] - fd).abs() / (1.0 + fd.abs()));
            }
            probes += 1;
        }
    }
    assert!(probes >= 1000);
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn network_expression_agrees_with_forward_and_gradients() {
    let nets = probe_nets();
    let points = random_points(100, 2);
    for net in &nets {
        let mut pool = ExprPool::with_vars(&["t", "x1", "x2"]);
        let v = net.to_expr(&mut pool).unwrap();
        let grads: Vec<_> = (0..3).map(|i| pool.differentiate(v, i)).collect();
        for (t, x) in &points {
            let p = [*t, x[0], x[1]];
            let direct = net.forward(*t, x).unwrap();
            let symbolic = pool.eval_point(v, &p).unwrap();
            assert!((direct - symbolic).abs() <= 1e-9, "{direct} vs {symbolic}");
            let (dt, dx) = net.input_gradients(*t, x).unwrap();
            for (k, g) in [dt, dx[0], dx[1]].into_iter().enumerate() {
                let s = pool.eval_point(grads[k], &p).unwrap();
                assert!((g - s).abs() <= 1e-9 * (1.0 + s.abs()), "d/d{k}: {g} vs {s}");
            }
        }
    }
}

#[test]
fn enclosure_of_network_contains_samples() {
    let net = &probe_nets()[4];
    let mut pool = ExprPool::with_vars(&["t", "x1", "x2"]);
    let v = net.to_expr(&mut pool).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let lo: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..0.9)).collect();
        let b: Vec<(f64, f64)> = lo.iter().map(|&l| (l, l + rng.gen_range(0.0..0.1))).collect();
        let enc = pool.eval_interval(v, &IntervalBox::from_bounds(&b).unwrap()).unwrap();
        for _ in 0..50 {
            let p: Vec<f64> = b.iter().map(|&(l, h)| rng.gen_range(l..=h)).collect();
            assert!(enc.contains(pool.eval_point(v, &p).unwrap()));
        }
    }
}

fn double_integrator(mode: &str, control: &str) -> SystemSpec {
    SystemSpec::from_toml_str(&format!(
        r#"[system]
states = ["x1", "x2"]
controls = ["u"]
dynamics = ["x2", "u"]
target = "x1^2 + x2^2 - 0.5"
horizon = 1.0
domain = [[-1.0, 1.0], [-1.0, 1.0]]
control_box = [[-1.0, 1.0]]
mode = "{mode}"
control = "{control}""#
    ))
    .unwrap()
}

#[test]
fn hamiltonian_matches_brute_force_over_controls() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in ["backward-tube", "forward-set"] {
        for control in ["max", "min"] {
            let spec = double_integrator(mode, control);
            let ham = spec.hamiltonian_tape().unwrap();
            let sign = if mode == "forward-set" { -1.0 } else { 1.0 };
            let (mut vars, mut scratch, mut dh) = (Vec::new(), Vec::new(), vec![0.0; 2]);
            for _ in 0..1000 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let h = ham.eval(0.5, &x, &p, &mut vars, &mut scratch, &mut dh).unwrap();
                let values = (0..=100).map(|k| {
                    let u = -1.0 + 0.02 * k as f64;
                    let mut a = vec![0.5, x[0], x[1], u];
                    a.truncate(spec.num_model_vars());
                    let f: Vec<f64> = spec.dynamics().iter().map(|&d| spec.pool().eval_point(d, &a).unwrap()).collect();
                    sign * (f[0] * p[0] + f[1] * p[1])
                });
                let brute = if control == "max" {
                    values.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    values.fold(f64::INFINITY, f64::min)
                };
                assert!((h - brute).abs() <= 1e-12 * (1.0 + brute.abs()), "{mode}/{control}: {h} vs {brute}");
            }
        }
    }
}

#[test]
fn interval_arithmetic_is_outward_rounded() {
    let third = Interval::point(1.0).div(Interval::point(3.0)).unwrap();
    assert!(third.lo < third.hi);
    assert!(third.contains(1.0 / 3.0));
}
