use std::collections::BTreeMap;
use std::sync::Arc;

use clonestat_core::data::{Dataset, Observation};
use clonestat_core::inference::{McmcConfig, PriorSet};
use clonestat_core::integrate::IntegratorConfig;
use clonestat_core::models::{build_model, ModelConfig};
use clonestat_core::results::{read_results, write_json, write_results, GridManifest, ManifestCell, ResultsError};
use clonestat_core::{combined_estimate, run_grid, CellKey, GridSpec, Marginal};

fn conjugate_spec(prior_means: &[f64], k_levels: &[u64], seed: u64) -> GridSpec {
    let ys = [1.5, 2.5, 2.0, 1.0, 3.0];
    let rows = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| Observation {
            experiment: "e".into(),
            time: i as f64,
            variable: "y".into(),
            value: y,
        })
        .collect();
    GridSpec {
        model: build_model(&ModelConfig {
            name: "conjugate_normal".into(),
            ..Default::default()
        })
        .unwrap(),
        data: Arc::new(Dataset::new(rows).unwrap()),
        priors: prior_means
            .iter()
            .enumerate()
            .map(|(i, &m)| PriorSet {
                id: format!("p{i}"),
                params: [("theta".to_string(), Marginal::Normal { mean: m, variance: 1.0 })].into(),
            })
            .collect(),
        k_levels: k_levels.to_vec(),
        mcmc: McmcConfig {
            n_iter: 20_000,
            ..Default::default()
        },
        fixed: BTreeMap::new(),
        constraints: BTreeMap::new(),
        init: [("theta".to_string(), 2.0)].into(),
        integrator: IntegratorConfig::default(),
        seed,
    }
}

/// Cloned posterior for 5 unit-variance observations with mean 2 and an
/// N(μ, 1) prior.
fn oracle(k: u64, mu: f64) -> (f64, f64) {
    let v = 1.0 / (1.0 + 5.0 * k as f64);
    (v * (mu + 10.0 * k as f64), v)
}

fn manifest(spec: &GridSpec, hash: &str) -> GridManifest {
    GridManifest {
        config_hash: hash.into(),
        model: "conjugate_normal".into(),
        seed: spec.seed,
        cells: spec
            .keys()
            .into_iter()
            .map(|k| ManifestCell {
                seed: clonestat_core::cloning::cell_seed(spec.seed, k.k, &k.prior_id, 0),
                k: k.k,
                prior_id: k.prior_id,
            })
            .collect(),
        config: serde_json::json!({}),
    }
}

#[test]
fn every_cell_matches_its_conjugate_posterior() {
    let spec = conjugate_spec(&[0.0, 10.0], &[50, 200], 31);
    let runs = run_grid(&spec, 1).unwrap();
    assert_eq!(runs.len(), 4);
    for run in &runs {
        let c = &run.result;
        let mu = if c.key.prior_id == "p0" { 0.0 } else { 10.0 };
        let (m, v) = oracle(c.key.k, mu);
        let ess = c.diagnostics[0].ess.unwrap();
        let se = (v / ess).sqrt();
        assert!((c.means[0] - m).abs() < 4.0 * se, "{}: {} vs {m}", c.key, c.means[0]);
        assert!((c.variances[0] / v - 1.0).abs() < 0.15, "{}: {} vs {v}", c.key, c.variances[0]);
    }
    // Combined interval: mle near 2, asymptotic variance near σ²/n = 0.2.
    let comb = combined_estimate(&runs.iter().map(|r| r.result.clone()).collect::<Vec<_>>(), true).unwrap();
    assert!((comb.mle[0] - 2.0).abs() < 0.02);
    assert!((comb.asymptotic_variance[0] / 0.2 - 1.0).abs() < 0.15);
}

#[test]
fn grid_shape_and_order() {
    let spec = conjugate_spec(&[0.0, 1.0, -1.0], &[5, 20], 8);
    let keys = spec.keys();
    assert_eq!(keys.len(), 6);
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let runs = run_grid(&conjugate_spec(&[0.0, 1.0, -1.0], &[5, 20], 8), 2).unwrap();
    let got: Vec<CellKey> = runs.iter().map(|r| r.result.key.clone()).collect();
    assert_eq!(got, keys);
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = conjugate_spec(&[0.0, 3.0], &[2, 10, 40], 77);
    let a = run_grid(&spec, 1).unwrap();
    let b = run_grid(&spec, 4).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.result, y.result);
        assert_eq!(x.chain.draws, y.chain.draws);
    }
    let c = run_grid(&conjugate_spec(&[0.0, 3.0], &[2, 10, 40], 78), 1).unwrap();
    assert_ne!(a[0].chain.draws, c[0].chain.draws);
}

#[test]
fn invalid_grids_are_rejected() {
    assert!(conjugate_spec(&[0.0], &[1, 2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 1.0], &[2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 1.0], &[2, 2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 1.0], &[4, 2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 1.0], &[0, 2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 0.0], &[1, 2], 1).validate().is_err());
    assert!(conjugate_spec(&[0.0, 1.0], &[1, 2], 1).validate().is_ok());
}

#[test]
fn results_roundtrip_and_hash_guard() {
    let spec = conjugate_spec(&[0.0, 3.0], &[2, 10], 5);
    let runs = run_grid(&spec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_results(dir.path(), &manifest(&spec, "abc"), &runs).unwrap();
    let back = read_results(dir.path()).unwrap();
    assert_eq!(back.cells, written);
    for (cell, run) in back.cells.iter().zip(&runs) {
        assert_eq!(cell.means, run.result.means);
        let draws = back.chain(&cell.key).unwrap();
        assert_eq!(draws, run.chain.draws);
    }

    // A cell from another configuration poisons the directory.
    let stale = serde_json::json!({ "config_hash": "zzz" });
    let path = dir.path().join("cells").join(runs[0].result.key.dir_name()).join("summary.json");
    let mut text: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    text["config_hash"] = stale["config_hash"].clone();
    write_json(&path, &text).unwrap();
    assert!(matches!(read_results(dir.path()), Err(ResultsError::HashMismatch { .. })));
}
