//! Experiment dispatch: config in, result files out.
//!
//! Every run writes its tables atomically into the output directory plus a
//! `manifest.json` recording the effective config (after preset expansion
//! and command-line overrides), its hash, the library version and the
//! seed. Data files are a pure function of the manifest; only the manifest
//! timestamp varies between identical runs.

use crate::config::{
    resolve, CommandKind, ExperimentConfig, ForgetConfig, ModelId, Resolved, ReturnTailConfig,
};
use crate::table::{write_atomic, ColumnSpec, Table, Value};
use pomclab_core::ergodicity::{moment_estimate, return_times, tail_diagnostic, ReturnTimeConfig};
use pomclab_core::estimate::{
    argmax_check, class_distance, consistency_curve, fit_mle, kl_profile, ConsistencyCfg,
    EquivClassSpec, ModelSpec, ParamPoint,
};
use pomclab_core::hmm::{filter_tv_gap, simulate_hmm, Grid, Xi};
use pomclab_core::odm::{forgetting_gap, simulate_odm, NbinGarch, NmGarch};
use pomclab_core::rng::RngStream;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Run failure with its exit-code class.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(_) => 3,
            RunError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Numeric(_) => "numeric",
            RunError::Io(_) => "io",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Numeric(m) | RunError::Io(m) => m,
        }
    }
}

fn numeric(e: pomclab_core::Error) -> RunError {
    RunError::Numeric(e.to_string())
}

fn io_err(e: std::io::Error) -> RunError {
    RunError::Io(e.to_string())
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// CLI subcommand; must agree with the config's `command`.
    pub expect_command: Option<CommandKind>,
}

/// Successful run: where the artifacts went.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

pub fn run(config_text: &str, overrides: &Overrides) -> Result<RunOutcome, RunError> {
    let mut cfg = ExperimentConfig::parse(config_text).map_err(RunError::Config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(w) = overrides.workers {
        cfg.workers = Some(w);
    }
    if let Some(expect) = overrides.expect_command {
        if cfg.command != expect {
            return Err(RunError::Config(format!(
                "config declares command '{}' but the CLI invoked '{}'",
                cfg.command.name(),
                expect.name()
            )));
        }
    }

    let (cfg, resolved) = resolve(cfg).map_err(RunError::Config)?;
    let out_dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| RunError::Config("output_dir required (config key or --out)".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(io_err)?;

    let workers = cfg
        .workers
        .or_else(|| {
            std::env::var("POMCLAB_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0); // 0 lets rayon pick
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;

    let files = pool.install(|| dispatch(&cfg, &resolved, &out_dir))?;

    write_manifest(&cfg, &resolved, &out_dir, &files)?;
    Ok(RunOutcome { output_dir: out_dir, files })
}

fn dispatch(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    match resolved.command {
        CommandKind::Simulate => cmd_simulate(cfg, resolved, out),
        CommandKind::Fit => cmd_fit(cfg, resolved, out),
        CommandKind::KlProfile => cmd_kl_profile(cfg, resolved, out),
        CommandKind::Consistency => cmd_consistency(cfg, resolved, out),
        CommandKind::FilterForget => cmd_filter_forget(cfg, resolved, out),
        CommandKind::ReturnTail => cmd_return_tail(cfg, resolved, out),
        CommandKind::Moment => cmd_moment(cfg, resolved, out),
    }
}

fn push(table: &mut Table, row: Vec<Value>) -> Result<(), RunError> {
    table.push_row(row).map_err(RunError::Numeric)
}

fn write(table: &Table, out: &Path, stem: &str) -> Result<Vec<String>, RunError> {
    table.write(out, stem).map_err(io_err)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let n = cfg.n.expect("validated");
    let burn = cfg.burn_in.unwrap_or(0);
    let star = resolved.theta_star.as_ref().expect("validated");
    let rng = RngStream::new(resolved.seed, 0);

    let mut files = Vec::new();
    match (&resolved.model, star) {
        (ModelSpec::Hmm1 { noise, .. }, ParamPoint::Hmm(t)) => {
            let (xs, ys) = simulate_hmm(t, noise, 0.0, n + burn, &rng).map_err(numeric)?;
            let mut table = Table::new(vec![
                ColumnSpec::int("t"),
                ColumnSpec::float("x"),
                ColumnSpec::float("y"),
            ]);
            for k in burn + 1..=n + burn {
                push(&mut table, vec![
                    Value::Int((k - burn) as i64),
                    Value::Float(xs[k]),
                    Value::Float(ys[k - 1]),
                ])?;
            }
            files.extend(write(&table, out, "path")?);
        }
        (ModelSpec::Nbin { parametrization }, ParamPoint::Nbin(t)) => {
            let model = NbinGarch::with_parametrization(*t, *parametrization);
            let (xs, ys) = simulate_odm(&model, &t.omega, n + burn, &rng).map_err(numeric)?;
            let mut table = Table::new(vec![
                ColumnSpec::int("t"),
                ColumnSpec::float("x"),
                ColumnSpec::int("y"),
            ]);
            for k in burn..n + burn {
                push(&mut table, vec![
                    Value::Int((k - burn + 1) as i64),
                    Value::Float(xs[k]),
                    Value::Int(ys[k] as i64),
                ])?;
            }
            files.extend(write(&table, out, "path")?);
        }
        (ModelSpec::Nm { d }, ParamPoint::Nm(t)) => {
            let model = NmGarch::new(t.clone());
            let (xs, ys) = simulate_odm(&model, &t.omega.clone(), n + burn, &rng).map_err(numeric)?;
            let mut cols = vec![ColumnSpec::int("t")];
            for i in 1..=*d {
                cols.push(ColumnSpec::float(format!("x{i}")));
            }
            cols.push(ColumnSpec::float("y"));
            let mut table = Table::new(cols);
            for k in burn..n + burn {
                let mut row = vec![Value::Int((k - burn + 1) as i64)];
                row.extend(xs[k].iter().map(|&v| Value::Float(v)));
                row.push(Value::Float(ys[k]));
                push(&mut table, row)?;
            }
            files.extend(write(&table, out, "path")?);
        }
        _ => unreachable!("resolve() pairs model and parameter families"),
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

fn cmd_fit(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let n = cfg.n.expect("validated");
    let replicates = cfg.replicates.unwrap_or(1);
    let burn = cfg.burn_in.unwrap_or(500);
    let fit_cfg = cfg.fit.unwrap_or_default();
    let star = resolved.theta_star.as_ref().expect("validated");
    let bounds = resolved.theta_box.as_ref().expect("validated");
    let eq = EquivClassSpec::for_model(bounds.kind()).map_err(numeric)?;
    let rng = RngStream::new(resolved.seed, 0);
    let model = &resolved.model;
    let is_hmm = matches!(model, ModelSpec::Hmm1 { .. });

    type FitRow = (Vec<f64>, f64, f64, Option<f64>);
    let results: Vec<Result<FitRow, pomclab_core::Error>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let task = rng.substream(rep as u64);
            let data = model.simulate(star, n, burn, &task)?;
            let fit = fit_mle(model, &data, bounds, &fit_cfg)?;
            let delta = class_distance(&fit.theta_hat, star, &eq)?;
            // grid-discretization health: transition mass clipped at x_max,
            // reported at the fitted point
            let truncation = match (model, &fit.theta_hat, &data) {
                (
                    ModelSpec::Hmm1 { noise, grid, xi },
                    ParamPoint::Hmm(t),
                    pomclab_core::estimate::Observations::Real(ys),
                ) => {
                    let grid = Grid::new(grid)?;
                    let (_, report) =
                        pomclab_core::hmm::loglik_grid_with_report(t, noise, &grid, xi, ys)?;
                    Some(report.truncation_mass_max)
                }
                _ => None,
            };
            Ok((fit.theta_hat_vec, fit.loglik_at_hat, delta, truncation))
        })
        .collect();

    let mut cols = vec![ColumnSpec::int("replicate")];
    for name in model.param_names() {
        cols.push(ColumnSpec::float(format!("{name}_hat")));
    }
    cols.push(ColumnSpec::float("loglik"));
    cols.push(ColumnSpec::float("delta_to_class"));
    if is_hmm {
        cols.push(ColumnSpec::float("truncation_mass_max"));
    }
    let mut table = Table::new(cols);
    for (rep, res) in results.into_iter().enumerate() {
        let (theta_vec, ll, delta, truncation) = res.map_err(numeric)?;
        let mut row = vec![Value::Int(rep as i64)];
        row.extend(theta_vec.into_iter().map(Value::Float));
        row.push(Value::Float(ll));
        row.push(Value::Float(delta));
        if let Some(t) = truncation {
            row.push(Value::Float(t));
        }
        push(&mut table, row)?;
    }
    write(&table, out, "fit")
}

// ---------------------------------------------------------------------------
// kl-profile
// ---------------------------------------------------------------------------

fn cmd_kl_profile(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let n = cfg.n.expect("validated");
    let m = cfg.truncation_m.unwrap_or(200);
    let profile_cfg = cfg.profile.as_ref().expect("validated");
    let star = resolved.theta_star.as_ref().expect("validated");
    let model = &resolved.model;
    let names = model.param_names();
    let star_vec = model.vec_from_param(star).map_err(numeric)?;

    // cartesian product over the axes
    let axes: Vec<(usize, Vec<f64>)> = profile_cfg
        .axes
        .iter()
        .map(|axis| {
            let idx = names.iter().position(|n| *n == axis.param).expect("validated");
            let vals: Vec<f64> = (0..axis.points)
                .map(|i| {
                    axis.lo + (axis.hi - axis.lo) * i as f64 / (axis.points - 1) as f64
                })
                .collect();
            (idx, vals)
        })
        .collect();
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut grid = Vec::with_capacity(total);
    let mut coords = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut v = star_vec.clone();
        let mut point_coords = Vec::with_capacity(axes.len());
        for (idx, vals) in &axes {
            let val = vals[flat % vals.len()];
            flat /= vals.len();
            v[*idx] = val;
            point_coords.push(val);
        }
        let theta = model
            .param_from_vec(&v)
            .map_err(|e| RunError::Config(format!("profile point {point_coords:?}: {e}")))?;
        grid.push(theta);
        coords.push(point_coords);
    }

    let rng = RngStream::new(resolved.seed, 0);
    let profile = kl_profile(model, star, &grid, n, m, &rng).map_err(numeric)?;

    let mut cols: Vec<ColumnSpec> = profile_cfg
        .axes
        .iter()
        .map(|a| ColumnSpec::float(&a.param))
        .collect();
    cols.push(ColumnSpec::float("estimate"));
    cols.push(ColumnSpec::float("stderr"));
    let mut table = Table::new(cols);
    for (point, c) in profile.points.iter().zip(&coords) {
        let mut row: Vec<Value> = c.iter().map(|&v| Value::Float(v)).collect();
        row.push(Value::Float(point.estimate));
        row.push(Value::Float(point.stderr));
        push(&mut table, row)?;
    }
    let mut files = write(&table, out, "kl_profile")?;

    // summary: minimizer, class check at one-grid-cell tolerance
    let eq = EquivClassSpec::for_model(model.kind()).map_err(numeric)?;
    let tol = profile_cfg
        .axes
        .iter()
        .map(|axis| {
            let idx = names.iter().position(|n| *n == axis.param).unwrap();
            let spacing = (axis.hi - axis.lo) / (axis.points - 1) as f64;
            spacing / (1.0 + star_vec[idx].abs())
        })
        .fold(0.0, f64::max)
        * 1.0001;
    let ok = argmax_check(&profile, star, &eq, tol).map_err(numeric)?;
    let min_idx = profile
        .points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.estimate.partial_cmp(&b.1.estimate).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let mut cols = vec![
        ColumnSpec::int("argmax_ok"),
        ColumnSpec::float("class_tol"),
        ColumnSpec::float("truncation_sensitivity"),
    ];
    for a in &profile_cfg.axes {
        cols.push(ColumnSpec::float(format!("min_{}", a.param)));
    }
    let mut summary = Table::new(cols);
    let mut row = vec![
        Value::Int(ok as i64),
        Value::Float(tol),
        Value::Float(profile.truncation_sensitivity),
    ];
    row.extend(coords[min_idx].iter().map(|&v| Value::Float(v)));
    push(&mut summary, row)?;
    files.extend(write(&summary, out, "kl_summary")?);
    Ok(files)
}

// ---------------------------------------------------------------------------
// consistency
// ---------------------------------------------------------------------------

fn cmd_consistency(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let star = resolved.theta_star.as_ref().expect("validated");
    let bounds = resolved.theta_box.as_ref().expect("validated");
    let eq = EquivClassSpec::for_model(bounds.kind()).map_err(numeric)?;
    let curve_cfg = ConsistencyCfg {
        n_list: cfg.n_list.clone().expect("validated"),
        replicates: cfg.replicates.unwrap_or(5),
        burn: cfg.burn_in.unwrap_or(500),
        fit: cfg.fit.unwrap_or_default(),
    };
    let rng = RngStream::new(resolved.seed, 0);
    let rows = consistency_curve(&resolved.model, star, bounds, &eq, &curve_cfg, &rng)
        .map_err(numeric)?;

    let mut table = Table::new(vec![
        ColumnSpec::int("n"),
        ColumnSpec::int("replicates_ok"),
        ColumnSpec::int("replicates_failed"),
        ColumnSpec::float("mean_delta"),
        ColumnSpec::float("min_delta"),
        ColumnSpec::float("median_delta"),
        ColumnSpec::float("max_delta"),
    ]);
    for r in &rows {
        push(&mut table, vec![
            Value::Int(r.n as i64),
            Value::Int(r.replicates_ok as i64),
            Value::Int(r.replicates_failed as i64),
            Value::Float(r.mean_delta),
            Value::Float(r.min_delta),
            Value::Float(r.median_delta),
            Value::Float(r.max_delta),
        ])?;
    }
    write(&table, out, "consistency")
}

// ---------------------------------------------------------------------------
// filter-forget
// ---------------------------------------------------------------------------

fn cmd_filter_forget(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let defaults = ForgetConfig {
        steps: 500,
        x1: None,
        x2: None,
        xi_a: None,
        xi_b: None,
    };
    let fc = cfg.forget.as_ref().unwrap_or(&defaults);
    let star = resolved.theta_star.as_ref().expect("validated");
    let rng = RngStream::new(resolved.seed, 0);

    let gaps: Vec<f64> = match (&resolved.model, star) {
        (ModelSpec::Hmm1 { noise, grid, .. }, ParamPoint::Hmm(t)) => {
            let grid = Grid::new(grid).map_err(numeric)?;
            let (_, ys) = simulate_hmm(t, noise, 0.0, fc.steps, &rng).map_err(numeric)?;
            let xi_a = fc.xi_a.unwrap_or(Xi::Dirac { x: 0.0 });
            let xi_b = fc.xi_b.unwrap_or(Xi::Uniform);
            filter_tv_gap(t, noise, &grid, &xi_a, &xi_b, &ys).map_err(numeric)?
        }
        (ModelSpec::Nbin { parametrization }, ParamPoint::Nbin(t)) => {
            let model = NbinGarch::with_parametrization(*t, *parametrization);
            let scalar = |v: &Option<Vec<f64>>, default: f64| -> Result<f64, RunError> {
                match v {
                    None => Ok(default),
                    Some(v) if v.len() == 1 => Ok(v[0]),
                    Some(v) => Err(RunError::Config(format!(
                        "nbin starting state must be a single value, got {v:?}"
                    ))),
                }
            };
            let x1 = scalar(&fc.x1, t.omega)?;
            let x2 = scalar(&fc.x2, t.omega + 4.0)?;
            let (_, ys) = simulate_odm(&model, &t.omega, fc.steps, &rng).map_err(numeric)?;
            forgetting_gap(&model, &ys, &x1, &x2).map_err(numeric)?
        }
        (ModelSpec::Nm { d }, ParamPoint::Nm(t)) => {
            let model = NmGarch::new(t.clone());
            let x1 = fc.x1.clone().unwrap_or_else(|| t.omega.clone());
            let x2 = fc
                .x2
                .clone()
                .unwrap_or_else(|| t.omega.iter().map(|o| o + 4.0).collect());
            if x1.len() != *d || x2.len() != *d {
                return Err(RunError::Config(format!(
                    "nm starting states must have {d} entries"
                )));
            }
            let (_, ys) = simulate_odm(&model, &t.omega.clone(), fc.steps, &rng).map_err(numeric)?;
            forgetting_gap(&model, &ys, &x1, &x2).map_err(numeric)?
        }
        _ => unreachable!(),
    };

    let mut table = Table::new(vec![ColumnSpec::int("k"), ColumnSpec::float("gap")]);
    for (k, g) in gaps.iter().enumerate() {
        push(&mut table, vec![Value::Int((k + 1) as i64), Value::Float(*g)])?;
    }
    write(&table, out, "forget")
}

// ---------------------------------------------------------------------------
// return-tail
// ---------------------------------------------------------------------------

fn cmd_return_tail(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let defaults = ReturnTailConfig { n_samples: 10_000, cap: 1_000_000 };
    let rc = cfg.return_tail.as_ref().unwrap_or(&defaults);
    let (theta, increment) = match (&resolved.model, resolved.theta_star.as_ref()) {
        (ModelSpec::Hmm1 { noise, .. }, Some(ParamPoint::Hmm(t))) => (t, noise.increment),
        _ => unreachable!("resolve() restricts return-tail to hmm1"),
    };
    let rt_cfg = ReturnTimeConfig::new(rc.n_samples, rc.cap).map_err(numeric)?;
    let rng = RngStream::new(resolved.seed, 0);
    let sample = return_times(theta, &increment, &rt_cfg, &rng).map_err(numeric)?;
    if sample.heavy_censoring() {
        eprintln!(
            "warning: {} of {} excursions censored at cap {}",
            sample.censored_count,
            sample.n_excursions(),
            sample.cap
        );
    }
    let report = tail_diagnostic(&sample).map_err(numeric)?;

    let mut curve = Table::new(vec![
        ColumnSpec::int("t"),
        ColumnSpec::float("survival"),
        ColumnSpec::float("log_survival"),
    ]);
    for &(t, ls) in &report.log_survival {
        push(&mut curve, vec![
            Value::Int(t as i64),
            Value::Float(ls.exp()),
            Value::Float(ls),
        ])?;
    }
    let mut files = write(&curve, out, "tail")?;

    let mut summary = Table::new(vec![
        ColumnSpec::int("n_uncensored"),
        ColumnSpec::int("censored_count"),
        ColumnSpec::float("geometric_fit_slope"),
        ColumnSpec::float("curvature_stat"),
        ColumnSpec::float("curvature_ci_lo"),
        ColumnSpec::float("curvature_ci_hi"),
        ColumnSpec::int("subexponential"),
    ]);
    push(&mut summary, vec![
        Value::Int(report.n_uncensored as i64),
        Value::Int(report.censored_count as i64),
        Value::Float(report.geometric_fit_slope),
        Value::Float(report.curvature_stat),
        Value::Float(report.curvature_ci.0),
        Value::Float(report.curvature_ci.1),
        Value::Int(report.subexponential as i64),
    ])?;
    files.extend(write(&summary, out, "tail_summary")?);
    Ok(files)
}

// ---------------------------------------------------------------------------
// moment
// ---------------------------------------------------------------------------

fn cmd_moment(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<String>, RunError> {
    let mc = cfg.moment.as_ref().expect("validated");
    let (theta, increment) = match (&resolved.model, resolved.theta_star.as_ref()) {
        (ModelSpec::Hmm1 { noise, .. }, Some(ParamPoint::Hmm(t))) => (t, noise.increment),
        _ => unreachable!("resolve() restricts moment to hmm1"),
    };
    let rng = RngStream::new(resolved.seed, 0);
    let est = moment_estimate(theta, &increment, mc.beta, mc.n, mc.burn, &rng).map_err(numeric)?;

    let mut table = Table::new(vec![
        ColumnSpec::float("beta"),
        ColumnSpec::float("estimate"),
        ColumnSpec::float("stderr"),
        ColumnSpec::int("n"),
        ColumnSpec::int("burn"),
    ]);
    push(&mut table, vec![
        Value::Float(mc.beta),
        Value::Float(est.estimate),
        Value::Float(est.stderr),
        Value::Int(est.n as i64),
        Value::Int(est.burn as i64),
    ])?;
    write(&table, out, "moment")
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

fn write_manifest(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    out: &Path,
    files: &[String],
) -> Result<(), RunError> {
    let mut hasher = Sha256::new();
    hasher.update(resolved.canonical_toml.as_bytes());
    let hash = hex_string(&hasher.finalize());
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "model": match cfg.model { ModelId::Hmm1 => "hmm1", ModelId::Nbin => "nbin", ModelId::Nm => "nm" },
        "seed": cfg.seed,
        "config_sha256": hash,
        "config_toml": resolved.canonical_toml,
        "outputs": files,
        "created_unix_ms": created,
    });
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| RunError::Io(e.to_string()))?;
    write_atomic(&out.join("manifest.json"), text.as_bytes()).map_err(io_err)
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = std::fmt::Write::write_fmt(&mut s, format_args!("{b:02x}"));
    }
    s
}
