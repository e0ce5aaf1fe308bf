use certreach::reach::*;
use certreach::system::SystemSpec;
use certreach::valuenet::{NetConfig, ValueNet};
use certreach::Error;

const SYSTEM: &str = include_str!("../../../data/double_integrator/system.toml");

fn cv(eps1: f64, eps2: f64) -> CertifiedValue {
    let spec = SystemSpec::from_toml_str(SYSTEM).unwrap();
    let net = ValueNet::new(NetConfig { omega: 3.0, seed: 4, ..NetConfig::new(2) }).unwrap();
    CertifiedValue::new(net, &spec, eps1, eps2).unwrap()
}

#[test]
fn epsilon_total_values() {
    let c = cv(0.015, 0.285);
    assert_eq!(epsilon_total(&c, 0.0).unwrap(), 0.300);
    assert_eq!(epsilon_total(&c, 1.0).unwrap(), 0.015);
    assert_eq!(epsilon_total(&cv(0.0, 0.0), 0.4).unwrap(), 0.0);
    assert!(matches!(epsilon_total(&c, 1.5), Err(Error::OutsideHorizon { .. })));
    for k in 0..100 {
        let t = k as f64 / 99.0;
        let want = 0.015 + 0.285 * (1.0 - t);
        assert!((epsilon_total(&c, t).unwrap() - want).abs() < 1e-15);
    }
}

#[test]
fn classes() {
    assert_eq!(classify_value(-1.0, 0.3), Class::InUnder);
    assert_eq!(classify_value(1.0, 0.3), Class::Outside);
    assert_eq!(classify_value(0.0, 0.3), Class::InOverOnly);
    let c = cv(0.01, 0.1);
    assert!(matches!(classify(&c, 0.5, &[2.0, 0.0]), Err(Error::OutsideDomain)));
    assert!(classify(&c, 0.5, &[0.2, 0.0]).is_ok());
}

#[test]
fn grids() {
    let c = cv(0.01, 0.1);
    let one = export_grid(&c, 0.0, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].x, vec![0.0, 0.0]);
    let rows = export_grid(&c, 0.0, 101).unwrap();
    assert_eq!(rows.len(), 10201);
    assert_eq!(rows[0].x, vec![-1.0, -1.0]);
    assert_eq!(rows[1].x[0], -1.0);
    assert_eq!(rows[10200].x, vec![1.0, 1.0]);
    assert!(export_grid(&c, 0.0, 0).is_err());
    for r in &rows {
        // the under-approximation never leaves the over-approximation
        assert!(r.class != Class::InUnder || r.value <= 0.11);
    }
    let s = summarize_grid(&c, 0.0, &rows).unwrap();
    assert_eq!(s.in_under + s.in_over_only + s.outside, 10201);
    assert!(s.under_area <= s.over_area && s.over_area <= 4.0);
    let csv = grid_csv(&rows[..2], &["x1".into(), "x2".into()]);
    assert!(csv.starts_with("x1,x2,value,class\n-1,-1,"));
}

#[test]
fn monotonicity_trivial_cases() {
    let c = cv(0.0, 1e6);
    let samples = monotonicity_samples(&c, 1000, 1);
    assert_eq!(monotonicity_diagnostic(&c, &samples).unwrap().violations, 0);
    let c = cv(0.0, 0.0);
    let zero: Vec<_> = samples.iter().map(|(t, x, _)| (*t, x.clone(), 0.0)).collect();
    let r = monotonicity_diagnostic(&c, &zero).unwrap();
    assert_eq!(r.violations, 0);
    assert_eq!(r.worst_slack, 0.0);
    assert!(samples.iter().all(|(t, _, s)| t + s <= 1.0));
}
