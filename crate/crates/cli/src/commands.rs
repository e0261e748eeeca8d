use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Serialize;

use clonestat_core::cloning::{drop_k_levels, run_grid, CellResult};
use clonestat_core::estimability::{render_text, transform_cells, EstimabilityReport, TransformOutcome};
use clonestat_core::models::ObsModel;
use clonestat_core::profile::{joint_region_sample, profile_result, profile_search, ProfileResult};
use clonestat_core::results::{read_results, write_json, write_results, GridManifest, GridResults, ManifestCell};
use clonestat_core::{build_model, estimability_report, ConditionalFit, Dataset, Draws, ProfileContext, SharedModel};

use crate::config::{resolve_seed, LoadedConfig, RunConfig};
use crate::error::{runtime, validation, CliError, Result};

pub const DEFAULT_MAX_PER_CELL: usize = 2000;

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn manifest_config(results: &GridResults) -> Result<RunConfig> {
    serde_json::from_value(results.manifest.config.clone())
        .map_err(|e| runtime(format!("{}: unreadable config in grid.json: {e}", results.root.display())))
}

fn require_fixed_discrete(config: &RunConfig, model: &SharedModel) -> Result<()> {
    for d in model.discrete_param_names() {
        if !config.fixed.contains_key(d) {
            return Err(validation(format!(
                "fixed: discrete parameter `{d}` must be fixed for `run` (use `profile` to search over it)"
            )));
        }
    }
    Ok(())
}

fn cell_table(cells: &[CellResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8}  {:<12} {:<12} {:>14} {:>12} {:>9} {:>7}  gate",
        "k", "prior", "parameter", "mean", "variance", "ess", "z"
    );
    for c in cells {
        for (j, name) in c.param_names.iter().enumerate() {
            let d = &c.diagnostics[j];
            let _ = writeln!(
                s,
                "{:>8}  {:<12} {:<12} {:>14.6e} {:>12.4e} {:>9} {:>7}  {}",
                c.key.k,
                c.key.prior_id,
                name,
                c.means[j],
                c.variances[j],
                d.ess.map_or("-".into(), |e| format!("{e:.0}")),
                d.geweke_z.map_or("-".into(), |z| format!("{z:.2}")),
                if c.param_ok[j] { "ok" } else { "FAIL" }
            );
        }
    }
    s
}

/// `run`: the full grid, written under `out`. Convergence failures are
/// reported after the results are on disk.
pub fn run(config: &Path, out: &Path, workers: Option<usize>, seed: Option<u64>) -> Result<()> {
    let loaded = LoadedConfig::load(config)?;
    let seed = resolve_seed(seed, &loaded.config)?;
    let model = build_model(&loaded.config.model)?;
    require_fixed_discrete(&loaded.config, &model)?;
    let data = Arc::new(loaded.load_dataset(&model)?);
    let spec = loaded.config.grid_spec(model.clone(), data, seed)?;
    spec.validate()?;
    let config_hash = loaded.config_hash(seed)?;
    let workers = workers.unwrap_or_else(default_workers).max(1);
    log::info!("running {} cells on {workers} worker(s)", spec.keys().len());

    let runs = run_grid(&spec, workers)?;
    let mut effective = loaded.config.clone();
    effective.seed = seed;
    let manifest = GridManifest {
        config_hash,
        model: model.name().to_owned(),
        seed,
        cells: runs
            .iter()
            .map(|r| ManifestCell {
                k: r.result.key.k,
                prior_id: r.result.key.prior_id.clone(),
                seed: r.result.seed,
            })
            .collect(),
        config: serde_json::to_value(&effective).expect("serializable config"),
    };
    let cells = write_results(out, &manifest, &runs)?;
    print!("{}", cell_table(&cells));

    let bad: Vec<String> = cells.iter().filter(|c| !c.diag_ok).map(|c| c.key.to_string()).collect();
    if !bad.is_empty() {
        return Err(CliError::Convergence(format!(
            "{} of {} cells failed the convergence gate ({}); results written to {}",
            bad.len(),
            cells.len(),
            bad.join("; "),
            out.display()
        )));
    }
    Ok(())
}

/// Cells and draws for every surviving cell, in key order.
fn cells_with_draws(results: &GridResults, cells: &[CellResult]) -> Result<Vec<(CellResult, Draws)>> {
    cells
        .iter()
        .map(|c| Ok((c.clone(), results.chain(&c.key)?)))
        .collect()
}

fn transformed(results: &GridResults, cells: &[CellResult], expr: &str, gate: &clonestat_core::inference::Gate) -> Result<TransformOutcome> {
    let pairs = cells_with_draws(results, cells)?;
    Ok(transform_cells(&pairs, expr, gate)?)
}

fn surviving_cells(results: &GridResults, drop_k: &[u64]) -> Result<Vec<CellResult>> {
    let cells = drop_k_levels(&results.cells, drop_k);
    let mut ks: Vec<u64> = cells.iter().map(|c| c.key.k).collect();
    ks.dedup();
    if ks.len() < 2 {
        return Err(validation(format!(
            "drop-k: {} clone level(s) left, the clone test needs ≥ 2",
            ks.len()
        )));
    }
    Ok(cells)
}

#[derive(Serialize)]
struct AnovaFile<'a> {
    config_hash: &'a str,
    dropped_k: &'a [u64],
    report: &'a EstimabilityReport,
    transforms: Vec<EstimabilityReport>,
}

/// `anova`: estimability report over a results directory, plus any
/// transforms named in the run config.
pub fn anova(results_dir: &Path, alpha: Option<f64>, drop_k: &[u64]) -> Result<()> {
    let results = read_results(results_dir)?;
    let config = manifest_config(&results)?;
    let alpha = alpha.unwrap_or(config.alpha);
    let cells = surviving_cells(&results, drop_k)?;
    let report = estimability_report(&cells, alpha, None)?;
    let mut transforms = Vec::new();
    for expr in &config.transforms {
        let t = transformed(&results, &cells, expr, &config.gate())?;
        for w in &t.warnings {
            eprintln!("warning: {w}");
        }
        transforms.push(estimability_report(&t.cells, alpha, None)?);
    }
    write_json(
        &results_dir.join("anova.json"),
        &AnovaFile {
            config_hash: &results.manifest.config_hash,
            dropped_k: drop_k,
            report: &report,
            transforms: transforms.clone(),
        },
    )?;
    print!("{}", render_text(&report));
    for t in &transforms {
        print!("{}", render_text(t));
    }
    Ok(())
}

#[derive(Serialize)]
struct TransformFile<'a> {
    config_hash: &'a str,
    expr: &'a str,
    undefined_draws: BTreeMap<String, usize>,
    report: &'a EstimabilityReport,
}

/// `transform`: estimability of a function of the parameters, evaluated
/// draw by draw.
pub fn transform(results_dir: &Path, expr: &str, alpha: Option<f64>, drop_k: &[u64], json: bool) -> Result<()> {
    let results = read_results(results_dir)?;
    let config = manifest_config(&results)?;
    let alpha = alpha.unwrap_or(config.alpha);
    let cells = surviving_cells(&results, drop_k)?;
    let t = transformed(&results, &cells, expr, &config.gate())?;
    for w in &t.warnings {
        eprintln!("warning: {w}");
    }
    let report = estimability_report(&t.cells, alpha, None)?;
    if json {
        let file = TransformFile {
            config_hash: &results.manifest.config_hash,
            expr,
            undefined_draws: t.undefined.iter().map(|(k, n)| (k.to_string(), *n)).collect(),
            report: &report,
        };
        println!("{}", serde_json::to_string_pretty(&file).expect("serializable report"));
    } else {
        print!("{}", render_text(&report));
    }
    Ok(())
}

#[derive(Serialize)]
struct FitSummary<'a> {
    value: i64,
    usable: bool,
    logl_at_mle: f64,
    cond_mle: BTreeMap<&'a str, f64>,
    cond_inv_fim: BTreeMap<&'a str, f64>,
    status: BTreeMap<&'a str, &'static str>,
}

#[derive(Serialize)]
struct ProfileFile<'a> {
    config_hash: &'a str,
    seed: u64,
    discrete: &'a str,
    result: &'a ProfileResult,
    fits: Vec<FitSummary<'a>>,
    region_threshold: f64,
    /// value → [drawn, accepted]
    region_counts: BTreeMap<i64, (usize, usize)>,
}

fn fit_summary(f: &ConditionalFit) -> FitSummary<'_> {
    let names = f.param_names.iter().map(String::as_str);
    FitSummary {
        value: f.discrete_value,
        usable: f.usable,
        logl_at_mle: f.logl_at_mle,
        cond_mle: names.clone().zip(f.cond_mle.iter().copied()).collect(),
        cond_inv_fim: names.zip(f.cond_inv_fim.iter().copied()).collect(),
        status: f
            .report
            .params
            .iter()
            .map(|p| (p.parameter.as_str(), p.status.as_str()))
            .collect(),
    }
}

/// `profile`: conditional cloning over the discrete parameter, the profile
/// set and the joint confidence region.
pub fn profile(config: &Path, out: &Path, workers: Option<usize>, seed: Option<u64>) -> Result<()> {
    let loaded = LoadedConfig::load(config)?;
    let cfg = &loaded.config;
    let discrete = cfg
        .discrete
        .clone()
        .ok_or_else(|| validation("discrete: `profile` needs a discrete parameter section"))?;
    if cfg.fixed.contains_key(&discrete.name) {
        return Err(validation(format!(
            "fixed: `{}` is profiled and cannot also be fixed",
            discrete.name
        )));
    }
    let seed = resolve_seed(seed, cfg)?;
    let model = build_model(&cfg.model)?;
    let data = Arc::new(loaded.load_dataset(&model)?);
    let spec = cfg.grid_spec(model, data, seed)?;
    let config_hash = loaded.config_hash(seed)?;
    let ctx = ProfileContext {
        spec,
        discrete_name: discrete.name.clone(),
        alpha: cfg.alpha,
        workers: workers.unwrap_or_else(default_workers).max(1),
    };
    let level = cfg.profile.level;
    let fits = match (&discrete.range, &discrete.candidates) {
        (Some([lo, hi]), _) => {
            let start = discrete.start.unwrap_or(lo + (hi - lo) / 2);
            profile_search((*lo, *hi), start, level, |v| ctx.conditional_dc(v))?
        }
        (None, Some(values)) => {
            let mut values = values.clone();
            values.sort_unstable();
            values.dedup();
            values
                .into_iter()
                .map(|v| ctx.conditional_dc(v))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        (None, None) => unreachable!("validated config"),
    };
    let result = profile_result(&fits, level)?;
    let region = joint_region_sample(&fits, cfg.profile.n_samples, level, seed, |v, p| ctx.loglik(v, p))?;

    let file = ProfileFile {
        config_hash: &config_hash,
        seed,
        discrete: &discrete.name,
        result: &result,
        fits: fits.iter().map(fit_summary).collect(),
        region_threshold: region.threshold,
        region_counts: region.counts.clone(),
    };
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    write_json(&out.join("profile.json"), &file)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![discrete.name.clone()];
    header.extend(region.param_names.iter().cloned());
    header.push("statistic".into());
    let csv_err = |e: csv::Error| runtime(format!("region.csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for p in &region.accepted {
        let mut rec = vec![p.discrete_value.to_string()];
        rec.extend(p.params.iter().map(f64::to_string));
        rec.push(p.statistic.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| runtime(format!("region.csv: {e}")))?;
    write_file(&out.join("region.csv"), &bytes)?;

    println!(
        "{} MLE {} (log-likelihood {:.4}); {:.0}% profile set {:?}",
        discrete.name,
        result.mle_value,
        result.logl_by_value[&result.mle_value],
        100.0 * level,
        result.profile_set
    );
    for (name, v) in result.param_names.iter().zip(&result.mle_params) {
        println!("  {name} = {v:.6e}");
    }
    println!("joint region: {} accepted points", region.accepted.len());
    Ok(())
}

/// `simulate`: draw a synthetic dataset from the model at given parameters.
pub fn simulate(config: &Path, params_path: &Path, out: &Path, seed: Option<u64>, noise: bool) -> Result<()> {
    let loaded = LoadedConfig::load(config)?;
    let cfg = &loaded.config;
    let seed = resolve_seed(seed, cfg)?;
    let model = build_model(&cfg.model)?;
    let text = std::fs::read_to_string(params_path)
        .map_err(|e| runtime(format!("{}: {e}", params_path.display())))?;
    let given: BTreeMap<String, f64> =
        serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", params_path.display())))?;
    let names = model.all_param_names();
    for k in given.keys() {
        if !names.contains(k) {
            return Err(validation(format!("{}: unknown parameter `{k}`", params_path.display())));
        }
    }
    let params: Vec<f64> = names
        .iter()
        .map(|n| {
            given
                .get(n)
                .or_else(|| cfg.fixed.get(n))
                .copied()
                .ok_or_else(|| validation(format!("{}: missing value for `{n}`", params_path.display())))
        })
        .collect::<Result<_>>()?;

    let design = if cfg.design.is_empty() {
        loaded.load_dataset(&model)?
    } else {
        Dataset::from_design(&cfg.design_rows())?
    };
    model.validate_data(&design)?;
    let preds = model.predict(&params, &design, &cfg.integrator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(preds.len());
    for p in &preds {
        let v = if !noise {
            p.mean
        } else {
            match (model.obs_model(), p.variance) {
                (ObsModel::Poisson, _) if p.mean == 0.0 => 0.0,
                (ObsModel::Poisson, _) => Poisson::new(p.mean)
                    .map_err(|e| runtime(format!("Poisson mean {}: {e}", p.mean)))?
                    .sample(&mut rng),
                (_, Some(var)) => Normal::new(p.mean, var.sqrt())
                    .map_err(|e| runtime(format!("normal({}, {var}): {e}", p.mean)))?
                    .sample(&mut rng),
                (_, None) => p.mean,
            }
        };
        values.push(v);
    }
    let simulated = design.with_values(&values)?;
    let mut buf = Vec::new();
    simulated.write_csv(&mut buf)?;
    write_file(out, &buf)?;
    println!("wrote {} rows to {}", simulated.len(), out.display());
    Ok(())
}

/// `plotdata`: long-format draws for scatter-plot matrices, thinned to at
/// most `max_per_cell` rows per cell.
pub fn plotdata(results_dir: &Path, out: &Path, max_per_cell: usize) -> Result<usize> {
    if max_per_cell == 0 {
        return Err(validation("max-per-cell: must be ≥ 1"));
    }
    let results = read_results(results_dir)?;
    let first = results.cells.first().ok_or_else(|| runtime("results hold no cells"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| runtime(format!("{}: {e}", out.display()));
    let mut header = vec!["k".to_string(), "prior_id".into(), "draw".into()];
    header.extend(first.param_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut rows = 0;
    for cell in &results.cells {
        let draws = results.chain(&cell.key)?;
        let stride = draws.len().div_ceil(max_per_cell).max(1);
        for i in (0..draws.len()).step_by(stride) {
            let mut rec = vec![cell.key.k.to_string(), cell.key.prior_id.clone(), i.to_string()];
            rec.extend(draws.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
            rows += 1;
        }
    }
    let mut bytes = w.into_inner().map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    bytes.flush().ok();
    write_file(out, &bytes)?;
    println!("wrote {rows} rows to {}", out.display());
    Ok(rows)
}
