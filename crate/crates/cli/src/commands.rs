use std::fmt::Write as _;
use std::path::Path;

use qrshrink::data::{load_csv_columns, synthetic_dataset};
use qrshrink::sim::ErrorDist;
use qrshrink::solver::default_lambda_grid;
use qrshrink::special::chisq_cdf;
use qrshrink::{
    estimate_all, fit_full, fit_penalized, outlier_test, real_data_study, risk_curve, run_study,
    wald_test, AsymptoticScenario, Combination, Dataset, DatasetPreset, Error, MetricsTable, PartitionedDesign,
    RiskFormula, SimConfig, SolverOptions,
};
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{write_atomic, CliError, Report};

const INTERCEPT: &str = "(intercept)";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `start:stop:step` (stop included) or a comma list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| usage(format!("bad number `{s}` in grid `{spec}`")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(num).collect(),
        3 => {
            let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if h.is_nan() || h <= 0.0 || b < a {
                return Err(usage(format!("grid `{spec}` needs step > 0 and stop >= start")));
            }
            let k = ((b - a) / h + 1e-9).floor() as usize;
            if k > 1_000_000 {
                return Err(usage(format!("grid `{spec}` is too long")));
            }
            // rounding strips the accumulated float noise, so 0.1:0.9:0.1 prints as 0.3 not 0.30000000000000004
            Ok((0..=k).map(|i| ((a + i as f64 * h) * 1e10).round() / 1e10).collect())
        }
        _ => Err(usage(format!("grid `{spec}` is neither start:stop:step nor a comma list"))),
    }
}

fn parse_dist(name: &str) -> Result<ErrorDist, CliError> {
    serde_json::from_value(Value::String(name.replace('-', "_"))).map_err(|_| {
        let names: Vec<String> = ErrorDist::ALL
            .iter()
            .map(|d| serde_json::to_value(d).unwrap().as_str().unwrap().to_string())
            .collect();
        usage(format!("unknown error distribution `{name}` (expected one of {})", names.join(", ")))
    })
}

struct Loaded {
    names: Vec<String>,
    design: PartitionedDesign,
}

fn load_dataset(d: &DataArgs, partition: Option<&PartitionArgs>) -> Result<Dataset, CliError> {
    let spec: Vec<String> = partition.and_then(|p| p.partition.clone()).unwrap_or_default();
    let mut data = load_csv_columns(&d.input, &d.response, &spec, d.covariates.as_deref())?;
    if let Some(k) = partition.and_then(|p| p.p2) {
        let m = data.column_names.len();
        if k == 0 || k >= m {
            return Err(usage(format!("--p2 must lie in 1..{m} for {m} covariates")));
        }
        let tail = data.column_names[m - k..].to_vec();
        data = Dataset::new(data.name, data.column_names, data.x, data.y, data.response_column, tail)?;
    }
    Ok(data)
}

fn build_design(d: &DataArgs, partition: Option<&PartitionArgs>, tau: f64, need_p2: bool) -> Result<Loaded, CliError> {
    let data = load_dataset(d, partition)?;
    if need_p2 && data.p2() == 0 {
        return Err(usage("a restricted block is required (--partition or --p2)"));
    }
    let order = data.partition_order();
    let mut names: Vec<String> = order.iter().map(|&j| data.column_names[j].clone()).collect();
    let design = if d.no_intercept {
        let x = data.x.select_columns(&order);
        PartitionedDesign::new(x, data.y.clone(), tau, order.len() - data.p2(), data.p2())?
    } else {
        names.insert(0, INTERCEPT.to_string());
        data.design(tau)?
    };
    Ok(Loaded { names, design })
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn fit(a: &FitArgs) -> Result<Report, CliError> {
    let l = build_design(&a.data, None, a.tau, false)?;
    let f = fit_full(&l.design, &SolverOptions::default())?;
    let mut csv = String::from("name,estimate\n");
    let mut table = format!("{:<16} {:>14}\n", "name", "estimate");
    for (n, b) in l.names.iter().zip(&f.beta) {
        let _ = writeln!(csv, "{},{b}", csv_escape(n));
        let _ = writeln!(table, "{n:<16} {b:>14.6}");
    }
    let _ = writeln!(table, "objective {:.6}, iterations {}", f.objective, f.iterations);
    let json = json!({
        "tau": a.tau,
        "n": l.design.n(),
        "coefficients": l.names.iter().zip(&f.beta).map(|(n, b)| json!({"name": n, "estimate": b})).collect::<Vec<_>>(),
        "objective": f.objective,
        "iterations": f.iterations,
    });
    Ok(Report { csv, json, table })
}

pub fn test(a: &TestArgs) -> Result<Report, CliError> {
    let l = build_design(&a.data, Some(&a.partition), a.tau, true)?;
    let opts = SolverOptions::default();
    let f = fit_full(&l.design, &opts)?;
    let w = wald_test(&l.design, &f, a.alpha)?;
    let p_value = 1.0 - chisq_cdf(w.statistic, w.dof as f64);
    let restricted = &l.names[l.names.len() - w.dof..];
    let csv = format!(
        "statistic,dof,w,sparsity,alpha,critical_value,p_value,reject\n{},{},{},{},{},{},{},{}\n",
        w.statistic, w.dof, w.w, w.sparsity, w.alpha, w.critical_value, p_value, w.reject
    );
    let mut table = String::new();
    let _ = writeln!(table, "restricted block: {}", restricted.join(", "));
    let _ = writeln!(table, "Wald statistic   {:.6} on {} dof", w.statistic, w.dof);
    let _ = writeln!(table, "scale w          {:.6} (sparsity {:.6})", w.w, w.sparsity);
    let _ = writeln!(table, "critical value   {:.6} at alpha {}", w.critical_value, w.alpha);
    let _ = writeln!(table, "p-value          {:.6}", p_value);
    let _ = writeln!(table, "reject           {}", w.reject);
    let json = json!({
        "tau": a.tau,
        "restricted": restricted,
        "statistic": w.statistic,
        "dof": w.dof,
        "w": w.w,
        "sparsity": w.sparsity,
        "alpha": w.alpha,
        "critical_value": w.critical_value,
        "p_value": p_value,
        "reject": w.reject,
    });
    Ok(Report { csv, json, table })
}

pub fn shrink(a: &TestArgs) -> Result<Report, CliError> {
    let l = build_design(&a.data, Some(&a.partition), a.tau, true)?;
    let set = estimate_all(&l.design, a.alpha, &SolverOptions::default())?;
    let mut combos = vec![
        ("FM", Combination::Full),
        ("SM", Combination::Sub),
        ("PT", Combination::Pretest { alpha: a.alpha }),
    ];
    if set.stein_available() {
        combos.push(("S", Combination::Stein));
        combos.push(("PS", Combination::PositiveStein));
    }
    let mut csv = String::from("estimator,name,estimate\n");
    let mut table = format!("{:<16}", "name");
    let mut cols = Vec::new();
    let mut ests = Vec::new();
    for (label, c) in &combos {
        let v = set.full_vector(*c)?;
        let _ = write!(table, " {label:>12}");
        ests.push(json!({
            "estimator": label,
            "weight": set.weight(*c)?,
            "coefficients": l.names.iter().zip(v.iter()).map(|(n, b)| json!({"name": n, "estimate": b})).collect::<Vec<_>>(),
        }));
        cols.push(v);
    }
    table.push('\n');
    for ((label, _), v) in combos.iter().zip(&cols) {
        for (n, b) in l.names.iter().zip(v.iter()) {
            let _ = writeln!(csv, "{label},{},{b}", csv_escape(n));
        }
    }
    for (i, n) in l.names.iter().enumerate() {
        let _ = write!(table, "{n:<16}");
        for v in &cols {
            let _ = write!(table, " {:>12.6}", v[i]);
        }
        table.push('\n');
    }
    let _ = writeln!(table, "Wald {:.4} on {} dof, reject at {}: {}", set.wald.statistic, set.wald.dof, a.alpha, set.wald.reject);
    if !set.stein_available() {
        table.push_str("Stein-type estimators need at least 3 restricted covariates\n");
    }
    let json = json!({
        "tau": a.tau,
        "alpha": a.alpha,
        "wald": {"statistic": set.wald.statistic, "dof": set.wald.dof, "reject": set.wald.reject},
        "estimators": ests,
    });
    Ok(Report { csv, json, table })
}

pub fn path(a: &PathArgs) -> Result<Report, CliError> {
    let l = build_design(&a.data, None, a.tau, false)?;
    let opts = SolverOptions::default();
    let lambdas = match &a.lambdas {
        Some(v) => v.clone(),
        None => default_lambda_grid(&l.design, a.alpha, a.nlambda, a.lambda_ratio, &opts)?,
    };
    let p = fit_penalized(&l.design, a.alpha, &lambdas, &opts)?;
    let header: Vec<String> = std::iter::once("lambda".to_string()).chain(l.names.iter().map(|n| csv_escape(n))).collect();
    let mut csv = header.join(",") + "\n";
    let mut table = format!("{:>12}", "lambda");
    for n in &l.names {
        let _ = write!(table, " {:>12}", truncate(n, 12));
    }
    table.push('\n');
    for (k, lam) in p.lambdas.iter().enumerate() {
        let _ = write!(csv, "{lam}");
        let _ = write!(table, "{lam:>12.6e}");
        for b in &p.betas[k] {
            let _ = write!(csv, ",{b}");
            let _ = write!(table, " {b:>12.6}");
        }
        csv.push('\n');
        table.push('\n');
    }
    let json = json!({
        "tau": a.tau,
        "alpha_mix": p.alpha_mix,
        "names": l.names,
        "lambdas": p.lambdas,
        "betas": p.betas,
        "losses": p.losses,
    });
    Ok(Report { csv, json, table })
}

fn truncate(s: &str, k: usize) -> String {
    s.chars().take(k).collect()
}

fn read_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(SimConfig::from_json(&text)?)
}

fn metrics_report(table: &MetricsTable, config: &SimConfig) -> Report {
    Report {
        csv: table.to_csv_string(),
        json: json!({"config": config, "rows": table.rows}),
        table: table.to_table_string(),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<Report, CliError> {
    let mut cfg = match (&a.config, a.example) {
        (Some(p), _) => read_config(p)?,
        (None, Some(k)) => {
            let f = match k {
                1 => SimConfig::example1,
                2 => SimConfig::example2,
                _ => return Err(usage(format!("--example must be 1 or 2, got {k}"))),
            };
            f(vec![0.25, 0.5, 0.75], ErrorDist::Normal, 100, 1)
        }
        (None, None) => return Err(usage("simulate needs --config or --example")),
    };
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = &a.tau {
        cfg.tau_levels = parse_grid(t)?;
    }
    if let Some(d) = &a.error_dist {
        cfg.error_dist = parse_dist(d)?;
    }
    let table = run_study(&cfg)?;
    Ok(metrics_report(&table, &cfg))
}

pub fn mrme_sweep(a: &SweepArgs) -> Result<Report, CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => {
            let mut c = SimConfig::new(a.n, a.p1, a.p2, a.sigma, parse_grid(&a.tau)?, 100, 1);
            c.error_dist = parse_dist(&a.error_dist)?;
            c
        }
    };
    if let Some(r) = a.reps {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let grid = parse_grid(&a.grid)?;
    let table = qrshrink::mrme_sweep(&cfg, &grid)?;
    Ok(metrics_report(&table, &cfg))
}

pub fn risk_curve_cmd(a: &RiskArgs) -> Result<Report, CliError> {
    let formula = match a.formula {
        FormulaArg::Consistent => RiskFormula::Consistent,
        FormulaArg::AsPrinted => RiskFormula::AsPrinted,
    };
    let grid = parse_grid(&a.grid)?;
    let scn = AsymptoticScenario::autoregressive(a.p1, a.p2, a.rho, a.w, a.alpha)?.with_formula(formula);
    let curve = risk_curve(&scn, &grid)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    let csv = String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))?;
    let mut table = format!("{:>8} {:<9} {:>12} {:>12} {:>12}\n", "delta", "estimator", "bias_norm", "qb", "risk");
    for (i, d) in curve.deltas.iter().enumerate() {
        for c in &curve.curves {
            let _ = writeln!(
                table,
                "{d:>8} {:<9} {:>12.6} {:>12.6} {:>12.6}",
                c.estimator.label(),
                c.bias_norm[i],
                c.qb[i],
                c.risk[i]
            );
        }
    }
    let mut json = serde_json::to_value(&curve).map_err(|e| CliError::Io(e.to_string()))?;
    json["scenario"] = json!({"p1": a.p1, "p2": a.p2, "alpha": a.alpha, "rho": a.rho, "w": a.w});
    Ok(Report { csv, json, table })
}


pub fn analyze(a: &AnalyzeArgs) -> Result<Report, CliError> {
    let data = match (&a.input, a.synthetic) {
        (_, Some(n)) => synthetic_dataset(n, a.seed)?,
        (Some(path), None) => match &a.preset {
            Some(name) => {
                let preset = DatasetPreset::by_name(name)
                    .ok_or_else(|| usage(format!("unknown preset `{name}` (expected prostate or barro)")))?;
                preset.load(path)?
            }
            None => {
                let response = a.response.as_deref().ok_or_else(|| usage("--response is required without --preset"))?;
                let partition = a.partition.clone().unwrap_or_default();
                if partition.is_empty() {
                    return Err(usage("--partition is required without --preset"));
                }
                load_csv_columns(path, response, &partition, a.covariates.as_deref())?
            }
        },
        (None, None) => return Err(usage("analyze needs --input or --synthetic")),
    };
    let taus = parse_grid(&a.tau)?;
    let diag = outlier_test(&data)?;
    let table = real_data_study(&data, &taus, a.reps, a.seed)?;
    if let Some(p) = &a.diagnostics_out {
        let mut s = serde_json::to_string_pretty(&diag).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        write_atomic(p, s.as_bytes())?;
    }
    let mut text = String::new();
    let _ = writeln!(text, "dataset {} (n = {}, restricted: {})", data.name, data.n(), data.partition_spec.join(", "));
    let _ = writeln!(text, "condition ratio {:.4}", diag.condition_ratio);
    if diag.outlier_indices.is_empty() {
        text.push_str("no observations flagged at Bonferroni level 0.05\n");
    } else {
        let idx: Vec<String> = diag.outlier_indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(text, "flagged observations: {}", idx.join(", "));
    }
    text.push('\n');
    text.push_str(&table.to_table_string());
    let json = json!({
        "dataset": data.name,
        "n": data.n(),
        "restricted": data.partition_spec,
        "diagnostics": diag,
        "rows": table.rows,
    });
    Ok(Report { csv: table.to_csv_string(), json, table: text })
}

pub const SCHEMAS: [(&str, &str); 8] = [
    ("fit", include_str!("../schemas/fit.json")),
    ("test", include_str!("../schemas/test.json")),
    ("shrink", include_str!("../schemas/shrink.json")),
    ("path", include_str!("../schemas/path.json")),
    ("simulate", include_str!("../schemas/simulate.json")),
    ("mrme-sweep", include_str!("../schemas/mrme-sweep.json")),
    ("risk-curve", include_str!("../schemas/risk-curve.json")),
    ("analyze", include_str!("../schemas/analyze.json")),
];

pub fn schema(a: &SchemaArgs) -> Result<Report, CliError> {
    let text = SCHEMAS
        .iter()
        .find(|(n, _)| *n == a.name)
        .map(|(_, s)| *s)
        .ok_or_else(|| {
            let names: Vec<&str> = SCHEMAS.iter().map(|(n, _)| *n).collect();
            usage(format!("no schema for `{}` (available: {})", a.name, names.join(", ")))
        })?;
    let json: Value = serde_json::from_str(text).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(Report { csv: text.to_string(), json, table: text.to_string() })
}
