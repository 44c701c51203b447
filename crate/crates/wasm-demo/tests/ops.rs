use selkd_wasm::{lattice, schedule, selection_sweep};

#[test]
fn schedule_endpoints_and_exposure() {
    let v = schedule(0.4, 1.0, 300_000, 6, &[0.826, 0.3]).unwrap();
    let curve = v["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 7);
    assert_eq!(curve[0]["threshold"], 0.4);
    assert_eq!(curve[6]["threshold"], 1.0);
    assert!((v["exposure"][0]["exposure"].as_f64().unwrap() - 0.71).abs() < 1e-9);
    assert_eq!(v["exposure"][1]["exposure"], 0.0);
    assert!(schedule(-0.1, 0.4, 10, 2, &[]).is_err());
}

#[test]
fn lattice_greedy_matches_viterbi_on_a_peaked_grid() {
    // frames favour 1, 1, blank, 2
    let mut logits = vec![0.0; 4 * 3];
    for (t, k) in [(0, 1), (1, 1), (2, 0), (3, 2)] {
        logits[t * 3 + k] = 5.0;
    }
    let v = lattice(4, 3, logits.clone(), &[1, 2]).unwrap();
    assert_eq!(v["greedy_output"], serde_json::json!([1, 2]));
    assert_eq!(v["score"], 1.0);
    let v = lattice(4, 3, logits, &[2, 1]).unwrap();
    assert!(v["score"].as_f64().unwrap() < 1.0);
    assert!(lattice(1, 3, vec![0.0; 3], &[1, 1]).unwrap()["infeasible"].as_bool().unwrap());
    assert!(lattice(2, 3, vec![0.0; 5], &[1]).is_err());
    assert!(lattice(2, 3, vec![0.0; 6], &[3]).is_err());
}

#[test]
fn sweep_reports_each_threshold() {
    let v = selection_sweep(200, 1, 2, &[0.0, 0.8, 1.01]).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["raw_ratio"], 1.0);
    assert_eq!(rows[2]["raw_ratio"], 0.0);
    assert!(rows[2]["selected"].is_null());
    assert_eq!(v["mode_mean_score"].as_array().unwrap().len(), 4);
}
