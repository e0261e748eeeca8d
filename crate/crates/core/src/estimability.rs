//! Clone-effect and prior-effect ANOVA on the cell-mean table, the
//! per-parameter verdict, and tests on functions of the parameters.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloning::{combine_param, CellKey, CellResult, Combined1};
use crate::expr::{Evaluated, Expr, ExprError};
use crate::inference::{summarize_values, Draws, Gate, InferenceError, ParamDiagnostics};
use crate::statfun::f_pvalue_flagged;

/// Share of undefined transformed draws above which a warning is raised.
pub const UNDEFINED_WARN_FRACTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EstimabilityError {
    #[error("ANOVA needs >= 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("ANOVA group {index} has {size} value(s); each group needs >= 2")]
    SmallGroup { index: usize, size: usize },
    #[error("non-finite value in ANOVA input")]
    NonFinite,
    #[error("unbalanced grid for `{parameter}`: missing cells {missing}")]
    Unbalanced { parameter: String, missing: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("no cells")]
    Empty,
    #[error("cells disagree on parameter names")]
    MixedParameters,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("cell {key}: {source}")]
    Cell {
        key: CellKey,
        #[source]
        source: InferenceError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnovaFlag {
    /// No within-group spread but the group means differ.
    ZeroWithinVariance,
    /// Every value is the same.
    AllEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    /// The exact p-value was below the reporting floor and `p` is zero.
    pub p_clamped: bool,
    pub ss_between: f64,
    pub ss_within: f64,
    pub flag: Option<AnovaFlag>,
}

/// One-way ANOVA F test.
pub fn oneway_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, EstimabilityError> {
    if groups.len() < 2 {
        return Err(EstimabilityError::TooFewGroups(groups.len()));
    }
    for (index, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(EstimabilityError::SmallGroup { index, size: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(EstimabilityError::NonFinite);
        }
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let a = groups.len();
    let (df_between, df_within) = (a - 1, n - a);
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let grand = groups.iter().zip(&means).map(|(g, m)| g.len() as f64 * m).sum::<f64>() / n as f64;

    let within_constant = groups.iter().all(|g| g.iter().all(|&v| v == g[0]));
    let ss_within = if within_constant {
        0.0
    } else {
        groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
            .sum()
    };
    let means_equal = means.iter().all(|&m| m == means[0]);
    let ss_between = if means_equal {
        0.0
    } else {
        groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
            .sum()
    };

    let base = AnovaResult {
        f: 0.0,
        df_between,
        df_within,
        p: 1.0,
        p_clamped: false,
        ss_between,
        ss_within,
        flag: None,
    };
    if ss_within == 0.0 {
        return Ok(if ss_between == 0.0 {
            AnovaResult {
                flag: Some(AnovaFlag::AllEqual),
                ..base
            }
        } else {
            AnovaResult {
                f: f64::INFINITY,
                p: 0.0,
                flag: Some(AnovaFlag::ZeroWithinVariance),
                ..base
            }
        });
    }
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    let p = f_pvalue_flagged(f, df_between as f64, df_within as f64).expect("positive degrees of freedom");
    Ok(AnovaResult {
        f,
        p: p.value,
        p_clamped: p.clamped,
        ..base
    })
}

/// Cell posterior means of one parameter, indexed [k level][prior].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeanTable {
    pub parameter: String,
    pub k_levels: Vec<u64>,
    pub prior_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CellMeanTable {
    /// Build the table for parameter `name`, requiring a complete grid.
    pub fn from_cells(cells: &[CellResult], name: &str) -> Result<Self, EstimabilityError> {
        let k_levels: Vec<u64> = cells.iter().map(|c| c.key.k).collect::<BTreeSet<_>>().into_iter().collect();
        let prior_ids: Vec<String> = cells
            .iter()
            .map(|c| c.key.prior_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut values = vec![vec![f64::NAN; prior_ids.len()]; k_levels.len()];
        let mut seen = vec![vec![false; prior_ids.len()]; k_levels.len()];
        for c in cells {
            let j = c
                .index_of(name)
                .ok_or_else(|| EstimabilityError::UnknownParameter(name.to_owned()))?;
            let ki = k_levels.binary_search(&c.key.k).expect("collected");
            let pi = prior_ids.binary_search(&c.key.prior_id).expect("collected");
            values[ki][pi] = c.means[j];
            seen[ki][pi] = true;
        }
        let mut missing = Vec::new();
        for (ki, k) in k_levels.iter().enumerate() {
            for (pi, p) in prior_ids.iter().enumerate() {
                if !seen[ki][pi] {
                    missing.push(format!("({k}, {p})"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(EstimabilityError::Unbalanced {
                parameter: name.to_owned(),
                missing: missing.join(", "),
            });
        }
        Ok(Self {
            parameter: name.to_owned(),
            k_levels,
            prior_ids,
            values,
        })
    }

    /// One group per clone level; priors are the replicates.
    pub fn by_clone(&self) -> Vec<Vec<f64>> {
        self.values.clone()
    }

    /// One group per prior; clone levels are the replicates.
    pub fn by_prior(&self) -> Vec<Vec<f64>> {
        (0..self.prior_ids.len())
            .map(|p| self.values.iter().map(|row| row[p]).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Estimable,
    Inestimable,
    InsufficientClones,
    ChainsUnconverged,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Estimable => "estimable",
            Status::Inestimable => "inestimable",
            Status::InsufficientClones => "insufficient_clones",
            Status::ChainsUnconverged => "chains_unconverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub parameter: String,
    pub clone_test: Option<AnovaResult>,
    /// Present only when the clone test did not reject.
    pub prior_test: Option<AnovaResult>,
    pub status: Status,
    /// Present only for estimable parameters.
    pub combined: Option<Combined1>,
    /// Cells whose chains failed the gate for this parameter.
    pub unconverged_cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimabilityReport {
    pub alpha: f64,
    pub k_levels: Vec<u64>,
    pub prior_ids: Vec<String>,
    pub params: Vec<ParamReport>,
}

impl EstimabilityReport {
    pub fn get(&self, name: &str) -> Option<&ParamReport> {
        self.params.iter().find(|p| p.parameter == name)
    }
}

/// Run the sequential tests for every parameter (or the filtered subset).
pub fn estimability_report(
    cells: &[CellResult],
    alpha: f64,
    param_filter: Option<&[String]>,
) -> Result<EstimabilityReport, EstimabilityError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimabilityError::BadAlpha(alpha));
    }
    let mut sorted: Vec<CellResult> = cells.to_vec();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let first = sorted.first().ok_or(EstimabilityError::Empty)?;
    if sorted.iter().any(|c| c.param_names != first.param_names) {
        return Err(EstimabilityError::MixedParameters);
    }
    let names: Vec<String> = match param_filter {
        Some(f) => {
            for n in f {
                if !first.param_names.contains(n) {
                    return Err(EstimabilityError::UnknownParameter(n.clone()));
                }
            }
            first.param_names.iter().filter(|n| f.contains(n)).cloned().collect()
        }
        None => first.param_names.clone(),
    };
    let mut params = Vec::with_capacity(names.len());
    let mut k_levels = Vec::new();
    let mut prior_ids = Vec::new();
    for name in &names {
        let j = first.index_of(name).expect("checked");
        let table = CellMeanTable::from_cells(&sorted, name)?;
        k_levels = table.k_levels.clone();
        prior_ids = table.prior_ids.clone();
        let unconverged: Vec<String> = sorted
            .iter()
            .filter(|c| !c.param_ok[j])
            .map(|c| c.key.to_string())
            .collect();
        if !unconverged.is_empty() {
            log::warn!("`{name}`: {} cell(s) failed convergence diagnostics", unconverged.len());
            params.push(ParamReport {
                parameter: name.clone(),
                clone_test: None,
                prior_test: None,
                status: Status::ChainsUnconverged,
                combined: None,
                unconverged_cells: unconverged,
            });
            continue;
        }
        let clone_test = oneway_anova(&table.by_clone())?;
        let (prior_test, status) = if clone_test.p < alpha {
            (None, Status::InsufficientClones)
        } else {
            let pt = oneway_anova(&table.by_prior())?;
            let st = if pt.p < alpha {
                Status::Inestimable
            } else {
                Status::Estimable
            };
            (Some(pt), st)
        };
        params.push(ParamReport {
            parameter: name.clone(),
            clone_test: Some(clone_test),
            prior_test,
            status,
            combined: (status == Status::Estimable).then(|| combine_param(&sorted, j)),
            unconverged_cells: Vec::new(),
        });
    }
    Ok(EstimabilityReport {
        alpha,
        k_levels,
        prior_ids,
        params,
    })
}

/// p-values print in full down to the floor; smaller ones are marked.
pub fn format_p(p: f64, clamped: bool) -> String {
    if clamped {
        "<1e-300".to_owned()
    } else if p == 0.0 {
        "0".to_owned()
    } else if p < 1e-3 {
        format!("{p:.1e}")
    } else {
        format!("{p:.3}")
    }
}

fn format_estimate(c: &Combined1) -> String {
    let sig = |x: f64| {
        if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) {
            format!("{x:.3e}")
        } else {
            format!("{x:.4}")
        }
    };
    format!("{} ± {}", sig(c.mle), sig(c.half_width()))
}

/// Aligned text table: point estimate ± 95% half-width, clone p, prior p, status.
pub fn render_text(report: &EstimabilityReport) -> String {
    let header = ["parameter", "estimate (95%)", "clone p", "prior p", "status"];
    let rows: Vec<[String; 5]> = report
        .params
        .iter()
        .map(|p| {
            [
                p.parameter.clone(),
                p.combined.as_ref().map(format_estimate).unwrap_or_else(|| "-".into()),
                p.clone_test.map(|t| format_p(t.p, t.p_clamped)).unwrap_or_else(|| "-".into()),
                p.prior_test.map(|t| format_p(t.p, t.p_clamped)).unwrap_or_else(|| "-".into()),
                p.status.as_str().to_owned(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for r in &rows {
        line(&mut out, r);
    }
    let _ = writeln!(
        out,
        "alpha = {}; clone levels {:?}; priors {}",
        report.alpha,
        report.k_levels,
        report.prior_ids.join(", ")
    );
    out
}

/// A cell's draws evaluated through an expression.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutcome {
    pub table: CellMeanTable,
    /// One pseudo-parameter cell per input cell.
    pub cells: Vec<CellResult>,
    /// (cell, count of undefined draws)
    pub undefined: Vec<(CellKey, usize)>,
    pub warnings: Vec<String>,
}

/// Evaluate `expr` on every retained draw of every cell. Undefined draws
/// are skipped and counted. A transformed cell passes the gate when its
/// source chain did and the transformed draws reach the minimum ESS.
pub fn transform_cells(
    cells: &[(CellResult, Draws)],
    expr_text: &str,
    gate: &Gate,
) -> Result<TransformOutcome, EstimabilityError> {
    let expr = Expr::parse(expr_text)?;
    let name = expr_text.trim().to_owned();
    let mut out_cells = Vec::with_capacity(cells.len());
    let mut undefined = Vec::new();
    let mut warnings = Vec::new();
    for (cell, draws) in cells {
        let bound = expr.bind(draws.names())?;
        let mut values = Vec::with_capacity(draws.len());
        let mut bad = 0usize;
        for row in draws.rows() {
            match bound.eval(row) {
                Evaluated::Value(v) => values.push(v),
                Evaluated::Undefined => bad += 1,
            }
        }
        let wrap = |source| EstimabilityError::Cell {
            key: cell.key.clone(),
            source,
        };
        if bad > 0 {
            undefined.push((cell.key.clone(), bad));
            let frac = bad as f64 / draws.len().max(1) as f64;
            if frac > UNDEFINED_WARN_FRACTION {
                let msg = format!(
                    "cell {}: `{name}` undefined on {bad} of {} draws ({:.2}%)",
                    cell.key,
                    draws.len(),
                    100.0 * frac
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let s = summarize_values(&values).map_err(wrap)?;
        let d = ParamDiagnostics::compute(&values).map_err(wrap)?;
        // Stationarity belongs to the chain, which was already tested on
        // its coordinates; the transformed draws only need enough ESS.
        let ok = cell.diag_ok && d.ess.is_some_and(|e| e >= gate.min_ess);
        out_cells.push(CellResult {
            key: cell.key.clone(),
            param_names: vec![name.clone()],
            means: vec![s.mean],
            variances: vec![s.variance],
            n_draws: s.n,
            diagnostics: vec![d],
            param_ok: vec![ok],
            diag_ok: ok,
            seed: cell.seed,
            acceptance_rate: cell.acceptance_rate,
            chain_ref: cell.chain_ref.clone(),
        });
    }
    out_cells.sort_by(|a, b| a.key.cmp(&b.key));
    let table = CellMeanTable::from_cells(&out_cells, &name)?;
    Ok(TransformOutcome {
        table,
        cells: out_cells,
        undefined,
        warnings,
    })
}
