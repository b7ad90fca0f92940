//! Configuration-driven experiments: every command turns an
//! [`ExperimentConfig`] into a [`Report`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use crate::martingale::{self, log_grid};
use crate::models::{self, condition_star_estimate, Model, ModelSpec};
use crate::poisson::{self, solve_poisson, PoissonReport, PoissonSolution};
use crate::rates::{self, McOptions, QuadratureOptions, DEFAULT_BUDGET};
use crate::report::{self, emit_report, fmt_float, float_row, Format, Report, Table};
use crate::sim::mc_variance_estimate;
use crate::spectral::{self, ScanOptions, SpectralConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectral,
    Poisson,
    Martingale,
    Charfn,
    Rate,
    Integral,
    Doeblin,
    ConditionStar,
    Models,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Spectral,
        Command::Poisson,
        Command::Martingale,
        Command::Charfn,
        Command::Rate,
        Command::Integral,
        Command::Doeblin,
        Command::ConditionStar,
        Command::Models,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectral => "spectral",
            Command::Poisson => "poisson",
            Command::Martingale => "martingale",
            Command::Charfn => "charfn",
            Command::Rate => "rate",
            Command::Integral => "integral",
            Command::Doeblin => "doeblin",
            Command::ConditionStar => "condition-star",
            Command::Models => "models",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub gap_min: f64,
    pub quad_rel_tol: f64,
    pub quad_panels: usize,
    pub quad_max_panels: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let q = QuadratureOptions::default();
        Self {
            gap_min: q.gap_min,
            quad_rel_tol: q.rel_tol,
            quad_panels: q.panels,
            quad_max_panels: q.max_panels,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub t_max: Option<f64>,
    pub alpha: Option<f64>,
    pub n_grid: Option<Vec<usize>>,
    pub t_grid: Option<Vec<f64>>,
    pub t_per_n: Option<usize>,
    pub samples: Option<usize>,
    pub paths: Option<usize>,
    pub delta: Option<f64>,
    pub master_seed: Option<u64>,
    pub budget: Option<u64>,
    pub n_max: Option<usize>,
    pub p_max: Option<usize>,
    pub max_lag: Option<usize>,
    pub n0: Option<usize>,
    pub trials: Option<usize>,
    pub initial_law: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
    pub tolerances: Tolerances,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
            svg: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub output: OutputConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Static checks; model construction errors surface later as numerical
    /// failures.
    pub fn validate(&self, command: Command) -> Result<()> {
        let p = &self.params;
        let tol = &p.tolerances;
        if !(tol.gap_min > 0.0) || !(tol.quad_rel_tol > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if tol.quad_panels < 2 || !tol.quad_panels.is_multiple_of(2) || tol.quad_max_panels < tol.quad_panels {
            return Err(invalid("quadrature panels must be even and below the maximum"));
        }
        if let Some(grid) = &p.n_grid {
            if grid.is_empty() {
                return Err(invalid("n_grid is empty"));
            }
            if grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("n_grid must be positive and strictly increasing"));
            }
        }
        if let Some(grid) = &p.t_grid {
            if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
                return Err(invalid("t_grid must be a non-empty list of finite values"));
            }
        }
        if let Some(d) = p.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid("delta must lie in (0, 1)"));
            }
        }
        for (name, v) in [("t_max", p.t_max), ("alpha", p.alpha), ("sigma2", p.sigma2)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(invalid(format!("{name} must be positive")));
                }
            }
        }
        for (name, v) in [
            ("t_per_n", p.t_per_n),
            ("samples", p.samples),
            ("paths", p.paths),
            ("n0", p.n0),
            ("trials", p.trials),
            ("n_max", p.n_max),
        ] {
            if v == Some(0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if command == Command::Models {
            return Ok(());
        }
        let Some(model) = &self.model else {
            return Err(invalid(format!("{command} needs a model")));
        };
        let affine = matches!(model, ModelSpec::Affine(_) | ModelSpec::Ar1Scalar { .. });
        match command {
            Command::ConditionStar if !affine => Err(invalid("condition-star needs an affine model")),
            Command::ConditionStar | Command::Rate if affine && p.master_seed.is_none() => {
                Err(invalid(format!("{command} on a simulated model needs master_seed")))
            }
            Command::Rate | Command::ConditionStar => Ok(()),
            _ if affine => Err(invalid(format!("{command} needs a finite chain"))),
            _ => Ok(()),
        }
    }

    pub fn n_grid_or(&self, default: &[usize]) -> Vec<usize> {
        self.params.n_grid.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// Process exit status for an error: 1 for configuration problems, 2 otherwise.
pub fn exit_code(error: &Error) -> i32 {
    if error.is_validation() {
        1
    } else {
        2
    }
}

/// Machine-readable error record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorRecord {
    pub fn new(error: &Error) -> Self {
        Self {
            schema_version: report::SCHEMA_VERSION,
            error: error.name().to_string(),
            message: error.to_string(),
            exit_code: exit_code(error),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Validates and runs one command.
pub fn run(command: Command, config: &ExperimentConfig) -> Result<Report> {
    config.validate(command)?;
    if command == Command::Models {
        return Ok(run_models());
    }
    let model = config.model.as_ref().expect("validated").resolve()?;
    match (command, model) {
        (Command::Rate, Model::Affine(m)) => run_affine_rate(config, &m),
        (Command::ConditionStar, Model::Affine(m)) => run_condition_star(config, &m),
        (command, Model::Finite(chain)) => match command {
            Command::Spectral => run_spectral(config, &chain),
            Command::Poisson => run_poisson(config, &chain),
            Command::Martingale => run_martingale(config, &chain),
            Command::Charfn => run_charfn(config, &chain),
            Command::Rate => run_finite_rate(config, &chain),
            Command::Integral => run_integral(config, &chain),
            Command::Doeblin => run_doeblin(&chain),
            _ => unreachable!("validated"),
        },
        _ => unreachable!("validated"),
    }
}

/// Runs a command and writes the requested formats into `out_dir`.
pub fn execute(command: Command, config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = run(command, config)?;
    let mut written = Vec::new();
    for format in &config.output.formats {
        if *format == Format::Svg {
            continue;
        }
        written.push(emit_report(&report, *format, out_dir)?);
    }
    if (config.output.svg || config.output.formats.contains(&Format::Svg)) && report.svg.is_some() {
        written.push(emit_report(&report, Format::Svg, out_dir)?);
    }
    Ok(written)
}

/// Writes `error.json` into `out_dir`, ignoring I/O trouble.
pub fn write_error_record(record: &ErrorRecord, out_dir: &Path) {
    let mut text = record.to_json();
    text.push('\n');
    let _ = report::write_atomic(&out_dir.join("error.json"), text.as_bytes());
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report payloads serialize")
}

fn run_models() -> Report {
    let mut table = Table::new(&["name", "parameters", "description"]);
    let catalog = models::catalog();
    for e in &catalog {
        table.push(vec![e.name.into(), e.parameters.into(), e.description.into()]);
    }
    Report::new("models", table, json!({ "models": to_value(&catalog) }))
}

fn solution_with_variance(chain: &FiniteChain) -> Result<(PoissonSolution, f64)> {
    let sol = solve_poisson(chain)?;
    let s2 = sol.require_variance()?;
    Ok((sol, s2))
}

fn run_spectral(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let (sol, sigma2) = solution_with_variance(chain)?;
    let t_max = p.t_max.unwrap_or(0.5 / sigma2.sqrt());
    let cfg = SpectralConfig {
        t_max: Some(t_max),
        gap_min: p.tolerances.gap_min,
    };
    let t_grid = p.t_grid.clone().unwrap_or_else(|| {
        let pos = log_grid(t_max * 1e-3, t_max, 16);
        pos.iter().rev().map(|t| -t).chain([0.0]).chain(pos.iter().copied()).collect()
    });
    let n_max = p.n_max.unwrap_or(30);
    let opts = ScanOptions {
        n_max,
        rho: chain.second_modulus() + 0.1,
        trials: p.trials.unwrap_or(8),
        seed: p.master_seed.unwrap_or(0),
    };
    let rows = spectral::spectral_scan(chain, &t_grid, &cfg, &opts)?;
    let exponents = spectral::scan_exponents(&rows);
    let h3 = spectral::h3_check(chain, &t_grid);
    let h4 = spectral::h4_uniform_bound(chain, &t_grid, n_max)?;
    let u_max = (0.05f64).min(t_max);
    let u_grid: Vec<f64> = (1..=10)
        .flat_map(|k| {
            let u = u_max * k as f64 / 10.0;
            [u, -u]
        })
        .collect();
    let expansion = spectral::lambda_expansion(chain, &sol, &u_grid, &cfg)?;
    let mut table = Table::new(&[
        "t", "re_lambda", "im_lambda", "abs_lambda", "gap", "residual_D", "b1_value", "b2_value", "b3_value",
    ]);
    for r in &rows {
        table.push(float_row(&[
            r.t,
            r.re_lambda,
            r.im_lambda,
            r.abs_lambda,
            r.gap,
            r.residual_d,
            r.b1_value,
            r.b2_value,
            r.b3_value,
        ]));
    }
    let max_residual = rows.iter().map(|r| r.residual_d).fold(0.0, f64::max);
    Ok(Report::new(
        "spectral",
        table,
        json!({
            "sigma2": sigma2,
            "t_max": t_max,
            "rho": opts.rho,
            "max_residual_D": max_residual,
            "exponents": { "b1": exponents[0], "b2": exponents[1], "b3": exponents[2] },
            "h3": h3,
            "h4": to_value(&h4),
            "lambda_expansion": to_value(&expansion),
        }),
    ))
}

fn run_poisson(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let sol = solve_poisson(chain)?;
    let h2 = poisson::h2_series(chain, &sol, p.p_max.unwrap_or(20));
    let vc = poisson::variance_consistency(chain, &sol, p.n_max.unwrap_or(1000))?;
    let mut table = Table::new(&["state", "nu", "xi", "xi_check", "q_xi_check", "psi"]);
    for x in 0..chain.states() {
        let mut row = vec![chain.kept_states()[x].to_string()];
        row.extend(float_row(&[
            chain.stationary()[x],
            chain.observable()[x],
            sol.xi_check[x],
            sol.q_xi_check[x],
            sol.psi[x],
        ]));
        table.push(row);
    }
    let mut payload = to_value(&PoissonReport::new(&sol, &h2));
    let extra = json!({
        "degenerate": sol.degenerate,
        "h2_decay_ratio": h2.decay_ratio,
        "variance_over_n": vc.var_over_n,
        "variance_ratio": vc.ratio,
        "raw_mean": chain.raw_mean(),
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (payload.as_object_mut(), extra) {
        obj.extend(more);
    }
    Ok(Report::new("poisson", table, payload))
}

fn run_martingale(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let (sol, sigma2) = solution_with_variance(chain)?;
    let n_grid = config.n_grid_or(&[16, 64, 256]);
    let t_per_n = p.t_per_n.unwrap_or(16);
    let rows = martingale::martingale_rows(chain, &sol, &n_grid, t_per_n)?;
    let ratios = martingale::prop41_ratio(chain, &sol, &n_grid, t_per_n)?;
    let lemma = martingale::lemma41_check(chain, &sol, p.max_lag.unwrap_or(20))?;
    let third = martingale::increment_third_moment(chain, &sol)?;
    let mut table = Table::new(&["n", "t", "re_total", "im_total", "re_A", "re_B", "re_C", "ratio"]);
    for r in &rows {
        let mut row = vec![r.n.to_string()];
        row.extend(float_row(&[r.t, r.re_total, r.im_total, r.re_a, r.re_b, r.re_c, r.ratio]));
        table.push(row);
    }
    Ok(Report::new(
        "martingale",
        table,
        json!({
            "sigma2": sigma2,
            "prop41_ratio": to_value(&ratios),
            "lemma41_max_deviation": lemma,
            "increment_third_moment": third,
        }),
    ))
}

fn run_charfn(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let (sol, sigma2) = solution_with_variance(chain)?;
    let sigma = sigma2.sqrt();
    let n_grid = config.n_grid_or(&[1, 16, 256]);
    let t_per_n = p.t_per_n.unwrap_or(16);
    let law = p.initial_law.as_deref();
    let mut table = Table::new(&["n", "t", "re", "im", "ratio"]);
    for &n in &n_grid {
        let sq = (n as f64).sqrt();
        for t in martingale::ratio_grid(n, t_per_n) {
            let z = rates::charfn_s(chain, t / (sigma * sq), n, law)?;
            let ratio = (z - (-t * t / 2.0).exp()).norm() * sq / t;
            let mut row = vec![n.to_string()];
            row.extend(float_row(&[t, z.re, z.im, ratio]));
            table.push(row);
        }
    }
    let ratios = rates::cor41_ratio(chain, &sol, &n_grid, t_per_n)?;
    Ok(Report::new(
        "charfn",
        table,
        json!({ "sigma2": sigma2, "cor41_ratio": to_value(&ratios) }),
    ))
}

fn rate_table(report: &rates::RateReport) -> Table {
    let mut table = Table::new(&["n", "distance", "method", "band_low", "band_high"]);
    for pt in &report.points {
        table.push(vec![
            pt.n.to_string(),
            fmt_float(pt.distance),
            pt.method.tag().into(),
            fmt_float(pt.band_low),
            fmt_float(pt.band_high),
        ]);
    }
    table
}

fn default_rate_grid() -> Vec<usize> {
    (6..=12).map(|k| 1usize << k).collect()
}

fn run_finite_rate(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let (sol, _) = solution_with_variance(chain)?;
    let n_grid = config.n_grid_or(&default_rate_grid());
    let budget = p.budget.map(u128::from).unwrap_or(DEFAULT_BUDGET);
    let mc = p.master_seed.map(|seed| McOptions {
        paths: p.paths.unwrap_or(10_000),
        master_seed: seed,
        delta: p.delta.unwrap_or(0.05),
    });
    let exact_possible = match chain.lattice() {
        Some(l) => {
            let worst = chain.states() as u128 * (*n_grid.last().expect("non-empty") as u128 * l.span() as u128 + 1);
            worst <= budget
        }
        None => false,
    };
    if !exact_possible && mc.is_none() {
        return Err(invalid("exact lattice program unavailable; master_seed needed for Monte Carlo"));
    }
    let report = rates::finite_rate(chain, &sol, &n_grid, p.initial_law.as_deref(), budget, mc.as_ref())?;
    let mut out = Report::new("rate", rate_table(&report), to_value(&report));
    out.svg = Some(report::rate_svg(&report));
    Ok(out)
}

fn run_affine_rate(config: &ExperimentConfig, model: &models::AffineModel) -> Result<Report> {
    let p = &config.params;
    let seed = p.master_seed.expect("validated");
    let n_grid = config.n_grid_or(&[100, 1000, 10_000]);
    let paths = p.paths.unwrap_or(10_000);
    let delta = p.delta.unwrap_or(0.05);
    let centered = model.center(seed)?;
    let sums = centered.sums_table(&n_grid, paths, seed)?;
    let n_last = *n_grid.last().expect("non-empty");
    let estimate = {
        let last: Vec<f64> = sums.iter().map(|row| row[row.len() - 1]).collect();
        mc_variance_estimate(&last, n_last)?
    };
    let sigma2 = p.sigma2.unwrap_or(estimate.sigma2_hat);
    let report = rates::empirical_rate(&sums, &n_grid, sigma2, delta)?;
    let mut payload = to_value(&report);
    if let Some(obj) = payload.as_object_mut() {
        obj.insert("sigma2_source".into(), json!(if p.sigma2.is_some() { "config" } else { "estimate" }));
        obj.insert("sigma2_estimate".into(), to_value(&estimate));
        obj.insert("centering".into(), to_value(&centered.centering));
        obj.insert("paths".into(), json!(paths));
        obj.insert("master_seed".into(), json!(seed));
    }
    let mut out = Report::new("rate", rate_table(&report), payload);
    out.svg = Some(report::rate_svg(&report));
    Ok(out)
}

fn run_integral(config: &ExperimentConfig, chain: &FiniteChain) -> Result<Report> {
    let p = &config.params;
    let (sol, _) = solution_with_variance(chain)?;
    let tol = &p.tolerances;
    let alpha = match p.alpha {
        Some(a) => a,
        None => rates::default_alpha(chain, &sol, tol.gap_min)?,
    };
    let opts = QuadratureOptions {
        panels: tol.quad_panels,
        max_panels: tol.quad_max_panels,
        rel_tol: tol.quad_rel_tol,
        gap_min: tol.gap_min,
    };
    let n_grid = config.n_grid_or(&[64, 256, 1024]);
    let results = n_grid
        .iter()
        .map(|&n| rates::berry_esseen_integral(chain, &sol, alpha, n, p.initial_law.as_deref(), &opts))
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(&[
        "n",
        "alpha",
        "A_n",
        "I_n",
        "J_n",
        "K_n",
        "identity_residual",
        "quadrature_error",
        "panels",
    ]);
    for r in &results {
        let mut row = vec![r.n.to_string()];
        row.extend(float_row(&[r.alpha, r.a_n, r.i_n, r.j_n, r.k_n, r.identity_residual, r.quadrature_error]));
        row.push(r.panels.to_string());
        table.push(row);
    }
    Ok(Report::new("integral", table, json!({ "alpha": alpha, "results": to_value(&results) })))
}

fn run_doeblin(chain: &FiniteChain) -> Result<Report> {
    let cert = spectral::doeblin_ess_bound(chain)?;
    let mut table = Table::new(&["ell", "contraction", "bound", "worst_set_value", "exact_set_value", "worst_state", "worst_set"]);
    let mut row = vec![cert.ell.to_string()];
    row.extend(float_row(&[cert.contraction, cert.bound, cert.worst_set_value, cert.exact_set_value]));
    row.push(chain.kept_states()[cert.worst_state].to_string());
    let set: Vec<String> = cert.worst_set.iter().map(|&y| chain.kept_states()[y].to_string()).collect();
    row.push(set.join(" "));
    table.push(row);
    Ok(Report::new("doeblin", table, to_value(&cert)))
}

fn run_condition_star(config: &ExperimentConfig, model: &models::AffineModel) -> Result<Report> {
    let p = &config.params;
    let n0 = p.n0.unwrap_or(1);
    let samples = p.samples.unwrap_or(100_000);
    let seed = p.master_seed.expect("validated");
    let r = condition_star_estimate(model, n0, samples, seed)?;
    let mut table = Table::new(&["n0", "samples", "I1", "I1_stderr", "I2", "I2_stderr", "pass"]);
    let mut row = vec![n0.to_string(), samples.to_string()];
    row.extend(float_row(&[r.i1, r.i1_stderr, r.i2, r.i2_stderr]));
    row.push(r.pass.to_string());
    table.push(row);
    let mut payload = to_value(&r);
    if let Some(obj) = payload.as_object_mut() {
        obj.insert("n0".into(), json!(n0));
        obj.insert("samples".into(), json!(samples));
        obj.insert("master_seed".into(), json!(seed));
    }
    Ok(Report::new("condition-star", table, payload))
}
