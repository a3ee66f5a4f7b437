//! Orchestration: builds the worker pool, runs one experiment and writes its
//! outputs.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use shelab::besov::check_c_beta_minus_convergence;
use shelab::diagnostics::{
    equivalence_harness, kappa_experiment, regularized_ladder_check, scheme_drift, sewing_rate_check,
    uniqueness_coupling, verdict_label, EquivalenceConfig, Executor, KappaConfig, LadderConfig, SewingConfig,
    UniquenessConfig, VerdictRow,
};
use shelab::drift::mollify;
use shelab::io::write_array;
use shelab::noise::sample_noise;
use shelab::solver::{grid_level, max_mild_residual, SchemeSpec, Solver};

use crate::config::{ExperimentConfig, Experiment, Format};
use crate::error::CliError;

pub const VERDICT_SCHEMA: &str = "shelab.verdicts/1";
pub const REPORT_SCHEMA: &str = "shelab.report/1";
pub const MANIFEST_SCHEMA: &str = "shelab.manifest/1";

/// A rayon pool of fixed size. Results come back in index order, so output
/// never depends on the number of workers.
pub struct Pool(rayon::ThreadPool);

impl Pool {
    pub fn new(workers: usize) -> Result<Self, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map(Pool)
            .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.0.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    /// 0 when every verdict passes, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            2
        }
    }
}

/// Reads, parses and validates a config, then applies command-line overrides.
pub fn load_config(path: &Path, experiment: Option<Experiment>, opts: &RunOptions) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::parse(&text, &path.display().to_string())?;
    if let (Some(want), Some(have)) = (experiment, cfg.experiment) {
        if want != have {
            let line = crate::config::locate_key(&text, "experiment").unwrap_or(1);
            return Err(CliError::Config(format!(
                "{}:{line}: experiment: config is for `{}`, not `{}`",
                path.display(),
                have.name(),
                want.name()
            )));
        }
    }
    if let Some(s) = opts.seed {
        cfg.ensemble.seed = s;
    }
    if let Some(d) = &opts.out_dir {
        cfg.output.dir = d.display().to_string();
    }
    if let Some(f) = opts.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

/// sha256 of the canonical TOML, without the output section so that the
/// same experiment hashes alike wherever it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = Default::default();
    let digest = Sha256::digest(c.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn setup_err(e: String) -> CliError {
    CliError::Config(e)
}

struct Emitted {
    pass: bool,
    rows: Vec<VerdictRow>,
    report: serde_json::Value,
    extra_files: Vec<PathBuf>,
}

fn to_value<T: Serialize>(t: &T) -> Result<serde_json::Value, CliError> {
    Ok(serde_json::to_value(t)?)
}

fn row(experiment: &str, resolution: &str, statistic: &str, value: f64, stderr: f64, pass: bool) -> VerdictRow {
    VerdictRow {
        experiment: experiment.into(),
        resolution: resolution.into(),
        statistic: statistic.into(),
        value,
        stderr,
        verdict: verdict_label(pass).into(),
    }
}

fn run_kappa(cfg: &ExperimentConfig, pool: &Pool) -> Result<Emitted, CliError> {
    let kc = KappaConfig {
        ensemble: cfg.ensemble_spec().map_err(setup_err)?,
        resolution: cfg.finest(),
        drift: cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?,
        mollification_level: cfg.mollification.level,
        settings: cfg.kappa_settings(),
        p: cfg.kappa.p,
    };
    let (rep, excluded) = kappa_experiment(pool, &kc)?;
    let pass = rep.verdict(cfg.kappa.tolerance);
    let res = kc.resolution.label();
    let mut rows = Vec::new();
    match &rep.kappa_hat {
        Some(f) => rows.push(row("kappa", &res, "kappa_hat", f.exponent, f.stderr, pass)),
        None => rows.push(row("kappa", &res, "kappa_hat", f64::NAN, f64::NAN, pass)),
    }
    rows.push(row("kappa", &res, "kappa_theory", rep.kappa_theory, 0.0, pass));
    for (h, n) in rep.lags.iter().zip(&rep.norms) {
        if let Some(n) = n {
            rows.push(row("kappa", &res, &format!("lag_norm(h={h})"), *n, f64::NAN, pass));
        }
    }
    rows.push(row("kappa", &res, "excluded_paths", excluded as f64, 0.0, pass));
    Ok(Emitted { pass, rows, report: json!({ "kappa": to_value(&rep)?, "excluded": excluded }), extra_files: vec![] })
}

fn run_sewing(cfg: &ExperimentConfig, pool: &Pool) -> Result<Emitted, CliError> {
    let sc = SewingConfig {
        ensemble: cfg.ensemble_spec().map_err(setup_err)?,
        resolution: cfg.finest(),
        drift: cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?,
        mollification_level: cfg.mollification.level,
        gamma: cfg.sewing.gamma,
        settings: cfg.sewing_settings(),
        germ_tag: format!("{:?}", cfg.drift.form).to_lowercase(),
    };
    let (rep, excluded) = sewing_rate_check(pool, &sc)?;
    let res = sc.resolution.label();
    let mut rows = Vec::new();
    let fit_row = |name: &str, f: &Option<shelab::diagnostics::ExponentFit>, pass: bool| match f {
        Some(f) => row("sewing", &res, name, f.exponent, f.stderr, pass),
        None => row("sewing", &res, name, f64::NAN, f64::NAN, pass),
    };
    rows.push(fit_row("a_slope", &rep.a_hat, rep.a_pass));
    rows.push(row("sewing", &res, "a_threshold", rep.a_threshold, 0.0, rep.a_pass));
    rows.push(fit_row("alpha1", &rep.alpha1_hat, rep.alpha1_pass));
    rows.push(row("sewing", &res, "delta_peak", rep.delta_peak, 0.0, rep.alpha1_pass));
    Ok(Emitted {
        pass: rep.pass(),
        rows,
        report: json!({ "sewing": to_value(&rep)?, "excluded": excluded }),
        extra_files: vec![],
    })
}

fn run_besov(cfg: &ExperimentConfig) -> Result<Emitted, CliError> {
    let spec = cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?;
    let levels = cfg.besov_levels();
    let seq = levels.iter().map(|&n| mollify(&spec, n)).collect::<Result<Vec<_>, _>>()?;
    let beta = cfg.besov.beta.unwrap_or(spec.declared.beta);
    let q = cfg.besov.q.unwrap_or(spec.declared.q);
    let rep = check_c_beta_minus_convergence(&seq, &spec, beta, q)?;
    let mut rows = Vec::new();
    for (n, v) in levels.iter().zip(&rep.norms_at_beta) {
        rows.push(row("besov", &format!("n={n}"), "norm_at_beta", *v, 0.0, rep.bounded));
    }
    rows.push(row("besov", "ladder", "growth_slope", rep.growth_slope, 0.0, rep.bounded));
    for p in &rep.probes {
        for (k, d) in p.tail_diameters.iter().enumerate() {
            rows.push(row(
                "besov",
                &format!("n={}", levels[k]),
                &format!("tail_diameter(beta'={})", p.beta_prime),
                *d,
                0.0,
                p.decreasing,
            ));
        }
    }
    Ok(Emitted { pass: rep.pass, rows, report: json!({ "besov": to_value(&rep)? }), extra_files: vec![] })
}

fn run_equivalence(cfg: &ExperimentConfig, pool: &Pool) -> Result<Emitted, CliError> {
    let drift = cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?;
    let ensemble = cfg.ensemble_spec().map_err(setup_err)?;
    let ec = EquivalenceConfig {
        ensemble: ensemble.clone(),
        resolutions: cfg.chain(),
        drift: drift.clone(),
        n_modes: cfg.equivalence.n_modes,
        n_bumps: cfg.equivalence.n_bumps,
        probes: cfg.probes(),
        contraction: cfg.equivalence.contraction,
    };
    let rep = equivalence_harness(pool, &ec)?;
    let mut rows = rep.rows();
    let mut pass = rep.pass;
    let mut report = json!({ "equivalence": to_value(&rep)? });
    if !cfg.mollification.levels.is_empty() {
        let lc = LadderConfig {
            ensemble,
            resolution: cfg.finest(),
            drift,
            levels: cfg.mollification.levels.clone(),
            n_modes: cfg.equivalence.n_modes,
            n_bumps: cfg.equivalence.n_bumps,
            probes: cfg.probes(),
        };
        let lr = regularized_ladder_check(pool, &lc)?;
        rows.extend(lr.rows());
        pass &= lr.pass;
        report["ladder"] = to_value(&lr)?;
    }
    Ok(Emitted { pass, rows, report, extra_files: vec![] })
}

fn run_uniqueness(cfg: &ExperimentConfig, pool: &Pool) -> Result<Emitted, CliError> {
    let uc = UniquenessConfig {
        ensemble: cfg.ensemble_spec().map_err(setup_err)?,
        resolutions: cfg.chain(),
        drift: cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?,
        coupling: cfg.coupling(),
        probes: cfg.probes(),
        contraction: cfg.coupling.contraction,
    };
    let rep = uniqueness_coupling(pool, &uc)?;
    Ok(Emitted { pass: rep.pass, rows: rep.rows(), report: json!({ "uniqueness": to_value(&rep)? }), extra_files: vec![] })
}

#[derive(Debug, Clone, Serialize)]
struct PathSummary {
    realization: usize,
    finite: bool,
    sup_abs_u: f64,
    mean_u_final: f64,
    max_mild_residual: f64,
}

fn run_simulate(cfg: &ExperimentConfig, pool: &Pool, out: &Path) -> Result<Emitted, CliError> {
    let ens = cfg.ensemble_spec().map_err(setup_err)?;
    let (g, tg) = cfg.finest().grids(&ens.setup, ens.horizon)?;
    let drift = cfg.drift_spec().map_err(|v| CliError::Config(format!("{}: {}", v.key, v.message)))?;
    let level = cfg.mollification.level.unwrap_or_else(|| grid_level(&g, &tg));
    let used = scheme_drift(&drift, level)?;
    let scheme = SchemeSpec::new(ens.scheme, used.clone());
    let solver = Solver::new(&g, &tg);
    let u0 = ens.initial.field(&g);
    let dump_dir = out.join("simulate");
    if cfg.output.dumps {
        fs::create_dir_all(&dump_dir)?;
    }
    let results = pool.map(ens.realizations, |r| -> Result<(PathSummary, Vec<PathBuf>), CliError> {
        let noise = sample_noise(&g, &tg, ens.master_seed, r as u64);
        let mut files = Vec::new();
        let path = match solver.solve(&scheme, &u0, &noise) {
            Ok(p) => p,
            Err(shelab::Error::NonFinite { .. }) | Err(shelab::Error::Diverged(_)) => {
                let s = PathSummary {
                    realization: r,
                    finite: false,
                    sup_abs_u: f64::NAN,
                    mean_u_final: f64::NAN,
                    max_mild_residual: f64::NAN,
                };
                return Ok((s, files));
            }
            Err(e) => return Err(e.into()),
        };
        let finite = path.u.iter().flatten().all(|x| x.is_finite());
        let sup = path.u.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
        let last = path.u.last().unwrap();
        let mean = (0..g.n_points()).map(|i| last[i] * g.weight(i)).sum::<f64>() / g.setup.extent();
        let mild = if finite {
            max_mild_residual(&path, solver.basis(), used.as_ref(), &cfg.probes())?
        } else {
            f64::NAN
        };
        if cfg.output.dumps {
            for (name, arr) in [("u", &path.u), ("v", &path.v.values), ("k", &path.k), ("noise", &noise.increments)] {
                let f = dump_dir.join(format!("{name}_{r:04}.bin"));
                write_array(BufWriter::new(fs::File::create(&f)?), arr)?;
                files.push(f);
            }
        }
        Ok((PathSummary { realization: r, finite, sup_abs_u: sup, mean_u_final: mean, max_mild_residual: mild }, files))
    });
    let mut summaries = Vec::new();
    let mut extra_files = Vec::new();
    for r in results {
        let (s, f) = r?;
        summaries.push(s);
        extra_files.extend(f);
    }
    let pass = summaries.iter().all(|s| s.finite);
    let res = cfg.finest().label();
    let mut rows = Vec::new();
    for s in &summaries {
        let tag = format!("r{:04}", s.realization);
        rows.push(row("simulate", &res, &format!("sup_abs_u:{tag}"), s.sup_abs_u, 0.0, s.finite));
        rows.push(row("simulate", &res, &format!("mean_u_final:{tag}"), s.mean_u_final, 0.0, s.finite));
        rows.push(row("simulate", &res, &format!("max_mild_residual:{tag}"), s.max_mild_residual, 0.0, s.finite));
    }
    Ok(Emitted { pass, rows, report: json!({ "simulate": summaries, "mollification_level": level }), extra_files })
}

fn write_rows(path: &Path, rows: &[VerdictRow], format: Format, experiment: &str) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut text = format!("# schema: {VERDICT_SCHEMA}\n").into_bytes();
            {
                let mut w = csv::Writer::from_writer(&mut text);
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            fs::write(path, text)?;
        }
        Format::Ndjson => {
            let mut text = serde_json::to_string(&json!({ "schema": VERDICT_SCHEMA, "experiment": experiment }))?;
            text.push('\n');
            for r in rows {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(path, text)?;
        }
    }
    Ok(())
}

/// Runs one experiment and writes its verdict table, report and manifest
/// into the configured output directory.
pub fn run(experiment: Experiment, cfg: &ExperimentConfig, workers: usize) -> Result<Outcome, CliError> {
    let pool = Pool::new(workers)?;
    let out = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&out)?;
    let emitted = match experiment {
        Experiment::Simulate => run_simulate(cfg, &pool, &out)?,
        Experiment::Equivalence => run_equivalence(cfg, &pool)?,
        Experiment::Kappa => run_kappa(cfg, &pool)?,
        Experiment::Sewing => run_sewing(cfg, &pool)?,
        Experiment::Besov => run_besov(cfg)?,
        Experiment::Uniqueness => run_uniqueness(cfg, &pool)?,
    };
    let name = experiment.name();
    let ext = match cfg.output.format {
        Format::Csv => "csv",
        Format::Ndjson => "ndjson",
    };
    let table = out.join(format!("{name}.{ext}"));
    write_rows(&table, &emitted.rows, cfg.output.format, name)?;
    let report_path = out.join(format!("{name}_report.json"));
    let report = json!({ "schema": REPORT_SCHEMA, "experiment": name, "report": emitted.report });
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    let mut files = vec![table, report_path];
    files.extend(emitted.extra_files);
    let manifest_path = out.join("manifest.json");
    let rel: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(&out).unwrap_or(f).display().to_string())
        .collect();
    let manifest = json!({
        "schema": MANIFEST_SCHEMA,
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "experiment": name,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.ensemble.seed,
        "verdicts": { name: verdict_label(emitted.pass) },
        "files": rel,
    });
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(manifest_path);
    Ok(Outcome { pass: emitted.pass, files })
}

/// Violations and derived quantities without running anything.
pub fn validate_listing(text: &str, origin: &str) -> Result<(Vec<String>, Vec<String>), CliError> {
    let cfg = ExperimentConfig::parse_unchecked(text, origin)?;
    let violations = cfg
        .validate()
        .into_iter()
        .map(|v| {
            let line = crate::config::locate_key(text, &v.key).unwrap_or(1);
            format!("{origin}:{line}: {}: {}", v.key, v.message)
        })
        .collect();
    let derived = cfg.derived().into_iter().map(|(k, v)| format!("{k} = {v}")).collect();
    Ok((violations, derived))
}
