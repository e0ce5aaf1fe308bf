use std::collections::VecDeque;

use certreach::cegis::*;
use certreach::certify::{CertResult, Frontier, Verdict, Witness};
use certreach::system::SystemSpec;
use certreach::train::TrainConfig;
use certreach::valuenet::{NetConfig, ValueNet};
use certreach::Result;

const FROZEN: &str = r#"
[system]
states = ["x1", "x2"]
controls = ["u"]
dynamics = ["0", "0*u"]
target = "x1^2 + x2^2 - 0.5"
horizon = 1.0
domain = [[-1.0, 1.0], [-1.0, 1.0]]
control_box = [[-1.0, 1.0]]
"#;

#[derive(Clone, Copy)]
enum Answer {
    Unsat,
    Sat,
    Budget,
}

struct Scripted {
    answers: VecDeque<Answer>,
    fallback: Answer,
    calls: Vec<(f64, f64)>,
    relaxed: usize,
}

impl Scripted {
    fn new(answers: &[Answer], fallback: Answer) -> Self {
        Self { answers: answers.iter().copied().collect(), fallback, calls: Vec::new(), relaxed: 0 }
    }
}

impl Certifier for Scripted {
    fn certify(&mut self, _net: &ValueNet, eps1: f64, eps2: f64) -> Result<CertResult> {
        self.calls.push((eps1, eps2));
        let verdict = match self.answers.pop_front().unwrap_or(self.fallback) {
            Answer::Unsat => Verdict::Unsat,
            Answer::Sat => Verdict::DeltaSat(Witness {
                query: certreach::certify::QueryLabel::R2Pos,
                t: 0.25,
                x: vec![0.5, -0.5],
                value: eps2 + 1.0,
                threshold: eps2,
                strict: true,
            }),
            Answer::Budget => Verdict::BudgetExhausted(Frontier { open_boxes: 1, open_volume: 0.5 }),
        };
        Ok(CertResult { verdict, boxes: 1, seconds: 0.0, queries: Vec::new() })
    }

    fn relax(&mut self, _factor: f64) {
        self.relaxed += 1;
    }
}

fn setup() -> (SystemSpec, ValueNet, TrainConfig, CegisConfig) {
    let spec = SystemSpec::from_toml_str(FROZEN).unwrap();
    let net = ValueNet::zeros(NetConfig::new(2)).unwrap();
    let train = TrainConfig { batch_size: 16, patience: 3, ..TrainConfig::default() };
    let cegis = CegisConfig { initial_training: false, gate_samples: 256, finetune_epochs: 50, ..CegisConfig::default() };
    (spec, net, train, cegis)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn always_unsat_shrinks_by_ten_percent() {
    let (spec, net, train, cfg) = setup();
    let cfg = CegisConfig { max_iterations: 3, ..cfg };
    let mut stub = Scripted::new(&[], Answer::Unsat);
    let out = run_cegis(&spec, net, &train, &mut stub, &cfg, None).unwrap();
    let eps = out.report.certified_epsilons();
    assert_eq!(eps.len(), 3);
    assert!(close(eps[0], 0.30) && close(eps[1], 0.27) && close(eps[2], 0.243));
    assert!(close(out.report.best_epsilon.unwrap(), 0.243));
    assert!(out.report.rows.iter().all(|r| r.train_s.is_none()));
    assert!(close(stub.calls[1].0, 0.05 * 0.27) && close(stub.calls[1].1, 0.95 * 0.27));
    let csv = out.report.csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,epsilon,train_s,verify_s,result");
    assert_eq!(lines[1], "1,0.30,-,0.00,Certified");
    assert_eq!(lines[3], "3,0.243,-,0.00,Certified");
}

#[test]
fn always_sat_certifies_nothing() {
    let (spec, net, train, cfg) = setup();
    let mut stub = Scripted::new(&[], Answer::Sat);
    let out = run_cegis(&spec, net, &train, &mut stub, &cfg, None).unwrap();
    assert!(out.report.certified_epsilons().is_empty());
    assert!(out.report.best_epsilon.is_none() && out.best.is_none());
    assert!(out.report.rows.iter().all(|r| r.result == RowResult::CounterexampleFound));
    assert!(out.report.rows.iter().all(|r| close(r.epsilon, 0.30)));
}

#[test]
fn schedule_shape() {
    let (spec, net, train, cfg) = setup();
    let mut stub = Scripted::new(&[Answer::Unsat, Answer::Sat, Answer::Unsat, Answer::Unsat, Answer::Sat], Answer::Sat);
    let dir = tempfile::tempdir().unwrap();
    let out = run_cegis(&spec, net, &train, &mut stub, &cfg, Some(dir.path())).unwrap();
    let r = &out.report.rows;
    let eps: Vec<f64> = r.iter().map(|r| r.epsilon).collect();
    for (a, b) in eps.iter().zip([0.30, 0.27, 0.27, 0.243, 0.2187]) {
        assert!(close(*a, b), "{eps:?}");
    }
    let results: Vec<RowResult> = r.iter().map(|r| r.result).collect();
    use RowResult::*;
    assert_eq!(results, [Certified, CounterexampleFound, Certified, Certified, CounterexampleFound]);
    assert!(close(out.report.best_epsilon.unwrap(), 0.243));
    // only the row after the counterexample needed training, biased at the witness
    let trained: Vec<bool> = r.iter().map(|r| r.train_s.is_some()).collect();
    assert_eq!(trained, [false, false, true, false, false]);
    assert_eq!(r[2].trained_near.as_ref().unwrap().x, vec![0.5, -0.5]);
    assert_eq!(out.report.stop_reason, StopReason::MaxIterations);
    let best = out.report.best_checkpoint.as_ref().unwrap();
    let (_, meta) = ValueNet::load_with_metadata(best).unwrap();
    assert!(close(meta["epsilon1"].as_f64().unwrap(), 0.05 * 0.243));
    assert!(r[3].checkpoint.as_ref().unwrap().exists());
    assert_eq!(out.certified.len(), 3);
    let csv = out.report.csv();
    assert!(csv.contains("\n5,0.2187,-,0.00,Counterexample found\n"));
}

#[test]
fn budget_rows_relax_the_certifier() {
    let (spec, net, train, cfg) = setup();
    let cfg = CegisConfig { max_iterations: 3, ..cfg };
    let mut stub = Scripted::new(&[Answer::Budget, Answer::Unsat], Answer::Unsat);
    let out = run_cegis(&spec, net, &train, &mut stub, &cfg, None).unwrap();
    assert_eq!(stub.relaxed, 1);
    assert_eq!(out.report.rows[0].result, RowResult::Budget);
    assert!(close(out.report.rows[1].epsilon, 0.30));
    assert!(close(out.report.rows[2].epsilon, 0.27));
}

#[test]
fn failed_finetune_stops_the_loop() {
    let (spec, net, train, cfg) = setup();
    let cfg = CegisConfig { finetune_epochs: 2, ..cfg };
    let mut stub = Scripted::new(&[Answer::Sat], Answer::Unsat);
    let out = run_cegis(&spec, net, &train, &mut stub, &cfg, None).unwrap();
    assert_eq!(out.report.rows.len(), 1);
    assert_eq!(out.report.stop_reason, StopReason::FinetuneBudget);
}

#[test]
fn epsilon_formatting() {
    assert_eq!(format_epsilon(0.3), "0.30");
    assert_eq!(format_epsilon(0.3 * 0.9 * 0.9), "0.243");
    assert_eq!(format_epsilon(0.3 * 0.9 * 0.9 * 0.9), "0.2187");
    assert_eq!(format_epsilon(1.0), "1");
}
