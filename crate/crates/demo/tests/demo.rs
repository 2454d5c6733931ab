use serde_json::Value;

use comet_demo::{effect_json, fit_json, simulate_json};

const SIM: &str = r#"{"side": 6, "true_rank": 2, "rho": 0.5, "tau2": 0.1, "n": 20, "m": 6, "seed": 3}"#;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn simulate_returns_truth_grid() {
    let v = parse(&simulate_json(SIM).unwrap());
    assert_eq!(v["truth"]["side"], 6);
    assert_eq!(v["truth"]["values"].as_array().unwrap().len(), 36);
    assert_eq!(v["support"].as_array().unwrap().len(), 36);
    assert_eq!(v["responses"].as_array().unwrap().len(), 120);
    assert_eq!(simulate_json(SIM).unwrap(), simulate_json(SIM).unwrap());
}

#[test]
fn fit_scores_are_sane_and_reproducible() {
    let req = format!(r#"{{"sim": {SIM}, "rank": 2, "k": 3, "iters": 300, "burnin": 100, "seed": 9, "level": 0.9}}"#);
    let out = fit_json(&req).unwrap();
    assert_eq!(out, fit_json(&req).unwrap());
    let v = parse(&out);
    assert_eq!(v["tau2"].as_array().unwrap().len(), 200);
    let truth: Vec<f64> = serde_json::from_value(v["truth"]["values"].clone()).unwrap();
    let scale = (truth.iter().map(|x| x * x).sum::<f64>() / truth.len() as f64).sqrt();
    assert!(v["rmse"].as_f64().unwrap() < scale, "{out}");
    let cov = v["coverage"].as_f64().unwrap();
    assert!((0.6..=1.0).contains(&cov), "{cov}");
}

#[test]
fn random_effect_uses_equicorrelation() {
    let v = parse(&effect_json(r#"{"side": 5, "rho": 0.3, "tau2": 2.0, "seed": 1}"#).unwrap());
    let sigma: Vec<f64> = serde_json::from_value(v["sigma"]["values"].clone()).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(sigma[i + 5 * j], if i == j { 1.0 } else { 0.3 });
        }
    }
    assert_eq!(v["effect"]["values"].as_array().unwrap().len(), 25);
}

#[test]
fn bad_requests_are_errors() {
    assert!(simulate_json(r#"{"side": 0, "true_rank": 1, "rho": 0.5, "tau2": 0.1, "n": 2, "m": 2, "seed": 1}"#).is_err());
    assert!(simulate_json(r#"{"side": 4}"#).is_err());
    assert!(effect_json(r#"{"side": 4, "rho": 1.5, "tau2": 1.0, "seed": 1}"#).is_err());
    assert!(effect_json(r#"{"side": 99, "rho": 0.5, "tau2": 1.0, "seed": 1}"#).is_err());
}
