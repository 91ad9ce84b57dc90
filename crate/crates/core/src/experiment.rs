//! Reproducible experiment runs: strict JSON configs, seeded trials, one
//! output directory per config hash, and summary tables with pass/fail
//! against configured thresholds.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ensembles::{fourth_cumulant, make_profile, EnsembleSpec, EntryLaw, ProfileKind, RngStream, Symmetry};
use crate::error::{Error, Result, ResultExt};
use crate::flow::{evolve_coupled, evolve_semigroup, evolve_single, propagate, FlowConfig, SemigroupConfig};
use crate::homogenization::{
    homog_report, pv_nonlocal, regularity_checks, residual_bound, rigidity_scale_difference, ubar_all, ubar_dt, ubar_x,
    InitialDifference, PvConfig,
};
use crate::spectral::SpectralQuantiles;
use crate::universality::{
    edge_probe, ks_distance, loglog_fit, lss_gap_prediction, mean, mean_shift_estimate, median, paired_ratio, sample_pair,
    GapRecord,
};

/// The experiments a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HomogResidual,
    HomogScaling,
    PdeCheck,
    FspCheck,
    GapCoupling,
    MeanShift,
    Regularity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::HomogResidual,
        ExperimentKind::HomogScaling,
        ExperimentKind::PdeCheck,
        ExperimentKind::FspCheck,
        ExperimentKind::GapCoupling,
        ExperimentKind::MeanShift,
        ExperimentKind::Regularity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::HomogResidual => "homog-residual",
            ExperimentKind::HomogScaling => "homog-scaling",
            ExperimentKind::PdeCheck => "pde-check",
            ExperimentKind::FspCheck => "fsp-check",
            ExperimentKind::GapCoupling => "gap-coupling",
            ExperimentKind::MeanShift => "mean-shift",
            ExperimentKind::Regularity => "regularity",
        }
    }

    fn stream_id(self) -> u64 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u64 + 1
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("experiment", format!("unknown experiment `{s}`")))
    }
}

/// Pass/fail thresholds. The two multipliers stand in for the `N^ε`
/// factors of the asymptotic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Multiplier for deterministic bounds.
    pub deterministic: f64,
    /// Multiplier for bounds that hold with high probability.
    pub stochastic: f64,
    /// Half-width of the accepted window around a theoretical slope.
    pub slope_tolerance: f64,
    pub mean_shift_slope_tolerance: f64,
    pub pde_relative: f64,
    pub gap_pass_fraction: f64,
    pub fsp_pass_fraction: f64,
    /// Largest allowed propagator entry beyond distance `fsp_reach·ℓ`.
    pub fsp_entry: f64,
    pub fsp_reach: usize,
    /// Horizon multiplier for `ℓ/(N^{1/3}(ℓ+a)^{2/3})`.
    pub fsp_horizon: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            deterministic: 20.0,
            stochastic: 50.0,
            slope_tolerance: 0.35,
            mean_shift_slope_tolerance: 0.4,
            pde_relative: 2e-3,
            gap_pass_fraction: 0.9,
            fsp_pass_fraction: 0.95,
            fsp_entry: 1e-6,
            fsp_reach: 6,
            fsp_horizon: 0.1,
        }
    }
}

/// Integrator settings for the coupled runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    /// Width of the implicitly treated interaction band.
    pub band: usize,
    /// Fixed largest step; when absent the step is `dt_scale·N^{−3/2}`
    /// (`dt_scale·10⁻³` for the mean shift, which only needs the edge).
    pub dt_max: Option<f64>,
    pub dt_scale: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            band: 2,
            dt_max: None,
            dt_scale: 1.0,
        }
    }
}

fn default_n_list() -> Vec<usize> {
    vec![500]
}
fn default_t_list() -> Vec<f64> {
    vec![0.5]
}
fn default_trials() -> usize {
    20
}
fn default_beta() -> u8 {
    1
}
fn default_entry_law() -> EntryLaw {
    EntryLaw::Rademacher
}
fn default_profile() -> ProfileKind {
    ProfileKind::Flat
}
fn default_profile_param() -> f64 {
    0.5
}
fn default_ell() -> usize {
    8
}
fn default_eps1() -> f64 {
    0.05
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_beta")]
    pub beta: u8,
    /// Entry law of the non-Gaussian initial matrix.
    #[serde(default = "default_entry_law")]
    pub entry_law: EntryLaw,
    #[serde(default = "default_profile")]
    pub profile: ProfileKind,
    /// Band width (banded) or cross-block weight (two-block).
    #[serde(default = "default_profile_param")]
    pub profile_param: f64,
    /// Parent of the per-run directory; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub flow: FlowSettings,
    /// Band half-width of the short-range operator.
    #[serde(default = "default_ell")]
    pub ell: usize,
    /// Exponent offset of the edge probe `γ_1 + iN^{−2/3+ε₁}`.
    #[serde(default = "default_eps1")]
    pub eps1: f64,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            n_list: default_n_list(),
            t_list: default_t_list(),
            trials: default_trials(),
            beta: default_beta(),
            entry_law: default_entry_law(),
            profile: default_profile(),
            profile_param: default_profile_param(),
            output_dir: None,
            thresholds: Thresholds::default(),
            flow: FlowSettings::default(),
            ell: default_ell(),
            eps1: default_eps1(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: String| Err(Error::config(k, m));
        if self.n_list.is_empty() {
            return bad("n_list", "must not be empty".into());
        }
        if let Some(n) = self.n_list.iter().find(|n| **n < 2) {
            return bad("n_list", format!("sizes must be at least 2, got {n}"));
        }
        if self.t_list.is_empty() {
            return bad("t_list", "must not be empty".into());
        }
        if let Some(t) = self.t_list.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return bad("t_list", format!("times must lie in (0, 1], got {t}"));
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        if self.experiment == ExperimentKind::MeanShift && self.trials < 2 {
            return bad("trials", "the mean shift needs at least 2 trials".into());
        }
        if self.beta != 1 && self.beta != 2 {
            return bad("beta", format!("must be 1 or 2, got {}", self.beta));
        }
        if self.ell == 0 {
            return bad("ell", "must be positive".into());
        }
        if self.flow.band == 0 {
            return bad("flow.band", "must be positive".into());
        }
        if !(self.flow.dt_scale > 0.0) || self.flow.dt_max.is_some_and(|d| !(d > 0.0)) {
            return bad("flow", "step sizes must be positive".into());
        }
        if !(self.eps1 > 0.0 && self.eps1 < 2.0 / 3.0) {
            return bad("eps1", format!("must lie in (0, 2/3), got {}", self.eps1));
        }
        let th = &self.thresholds;
        for (k, v) in [
            ("thresholds.deterministic", th.deterministic),
            ("thresholds.stochastic", th.stochastic),
            ("thresholds.slope_tolerance", th.slope_tolerance),
            ("thresholds.mean_shift_slope_tolerance", th.mean_shift_slope_tolerance),
            ("thresholds.pde_relative", th.pde_relative),
            ("thresholds.fsp_entry", th.fsp_entry),
            ("thresholds.fsp_horizon", th.fsp_horizon),
        ] {
            if !(v > 0.0) {
                return bad(k, format!("must be positive, got {v}"));
            }
        }
        for (k, v) in [
            ("thresholds.gap_pass_fraction", th.gap_pass_fraction),
            ("thresholds.fsp_pass_fraction", th.fsp_pass_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(k, format!("must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of the config without its output
    /// directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn symmetry(&self) -> Symmetry {
        Symmetry::from_beta(self.beta).expect("validated")
    }

    fn ensemble(&self, n: usize) -> Result<EnsembleSpec> {
        let sym = self.symmetry();
        Ok(EnsembleSpec {
            n,
            symmetry: sym,
            entry_law: self.entry_law,
            profile: make_profile(self.profile, n, self.profile_param, sym)?,
        })
    }

    fn flow_config(&self, n: usize) -> FlowConfig {
        let dt = self.flow.dt_max.unwrap_or(match self.experiment {
            ExperimentKind::MeanShift => self.flow.dt_scale * 1e-3,
            _ => self.flow.dt_scale * (n as f64).powf(-1.5),
        });
        FlowConfig::semi_implicit(self.flow.band, dt)
    }

    fn t_max(&self) -> f64 {
        self.t_list.iter().cloned().fold(0.0, f64::max)
    }
}

/// Reads, parses and validates a config file. Unknown keys are rejected and
/// type errors name the offending key path.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// A named threshold test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
        }
    }
}

/// Summary statistics of one labelled quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub stderr: f64,
}

impl Aggregate {
    pub fn of(name: impl Into<String>, values: &[f64]) -> Self {
        let count = values.len();
        let stderr = if count > 1 {
            let m = mean(values);
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / ((count - 1) * count) as f64).sqrt()
        } else {
            f64::NAN
        };
        Self {
            name: name.into(),
            count,
            mean: if count > 0 { mean(values) } else { f64::NAN },
            median: if count > 0 { median(values) } else { f64::NAN },
            stderr,
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub trials: Vec<Value>,
    pub aggregates: Vec<Aggregate>,
    pub checks: Vec<Check>,
    /// Excluded from the written files so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Length of the hash prefix naming the run directory.
const HASH_PREFIX: usize = 12;

struct RunWriter {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl RunWriter {
    fn new(parent: &Path, hash: &str, seed: u64) -> Result<Self> {
        let dir = parent.join(&hash[..HASH_PREFIX]);
        fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            hash: hash.to_string(),
            seed,
        })
    }

    /// Writes a CSV whose first line records the config hash and seed.
    fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = format!("# config_hash={} seed={}\n", self.hash, self.seed).into_bytes();
        body(&mut buf)?;
        let p = self.dir.join(name);
        fs::write(&p, buf).context(|| format!("writing {}", p.display()))
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(v)?;
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), json!(self.hash));
            m.insert("seed".into(), json!(self.seed));
        }
        let p = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        fs::write(&p, text).context(|| format!("writing {}", p.display()))
    }
}

fn rows_csv<'a>(header: &'a str, rows: &'a [Vec<f64>]) -> impl FnOnce(&mut Vec<u8>) -> Result<()> + 'a {
    move |buf| {
        use std::io::Write;
        writeln!(buf, "{header}")?;
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(buf, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Executes the configured experiment on `workers` threads (all available
/// when `None`) and writes its artifacts under
/// `output_dir/<hash prefix>/`. `output_dir` defaults to `runs`.
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let hash = config.hash();
    let parent = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let w = RunWriter::new(&parent, &hash, config.seed)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        builder = builder.num_threads(k.max(1));
    }
    let pool = builder.build().map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let ctx = || format!("experiment {}", config.experiment);
    let out = pool
        .install(|| match config.experiment {
            ExperimentKind::HomogResidual => homog(config, &w, false),
            ExperimentKind::HomogScaling => homog(config, &w, true),
            ExperimentKind::PdeCheck => pde_check(config, &w),
            ExperimentKind::FspCheck => fsp_check(config, &w),
            ExperimentKind::GapCoupling => gap_coupling(config, &w),
            ExperimentKind::MeanShift => mean_shift(config, &w),
            ExperimentKind::Regularity => regularity(config, &w),
        })
        .context(ctx)?;
    let record = RunRecord {
        experiment: config.experiment,
        // where the run was written is not part of what was run
        config: ExperimentConfig { output_dir: None, ..config.clone() },
        config_hash: hash,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        trials: out.trials,
        aggregates: out.aggregates,
        checks: out.checks,
        wall_clock_s: start.elapsed().as_secs_f64(),
        output_dir: w.dir.clone(),
    };
    w.json("record.json", &record)?;
    Ok(record)
}

#[derive(Default)]
struct Outcome {
    trials: Vec<Value>,
    aggregates: Vec<Aggregate>,
    checks: Vec<Check>,
}

fn trial_stream(cfg: &ExperimentConfig, n: usize, trial: usize) -> RngStream {
    RngStream::new(cfg.seed, cfg.experiment.stream_id())
        .substream(n as u64)
        .substream(trial as u64)
}

fn par_trials<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count)
        .into_par_iter()
        .map(|i| f(i).context(|| format!("trial {i}")))
        .collect()
}

struct HomogRow {
    trial: usize,
    t: f64,
    res_bulk: f64,
    bound_bulk: f64,
    res_edge: f64,
    bound_edge: f64,
    max_normalized: f64,
}

fn homog(cfg: &ExperimentConfig, w: &RunWriter, scaling: bool) -> Result<Outcome> {
    let mut out = Outcome::default();
    let th = cfg.thresholds;
    let mut table: Vec<Vec<f64>> = Vec::new();
    for &n in &cfg.n_list {
        let q = SpectralQuantiles::new(n);
        let spec = cfg.ensemble(n)?;
        let flow = cfg.flow_config(n);
        let bulk = n / 2;
        let per_trial = par_trials(cfg.trials, |i| {
            let s = trial_stream(cfg, n, i);
            let (l0, m0) = sample_pair(&spec, &s)?;
            let traj = evolve_coupled(&l0, &m0, cfg.t_max(), f64::from(cfg.beta), &s.substream(2), &cfg.t_list, &flow)?;
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for &t in &cfg.t_list {
                let r = homog_report(&traj, &q, t)?;
                rows.push(HomogRow {
                    trial: i,
                    t,
                    res_bulk: r.residual[bulk - 1],
                    bound_bulk: r.bound[bulk - 1],
                    res_edge: r.residual[0],
                    bound_edge: r.bound[0],
                    max_normalized: r.normalized.iter().cloned().fold(0.0, f64::max),
                });
                reports.push(r);
            }
            Ok((rows, reports, traj.step_stats))
        })?;
        for (i, (rows, reports, stats)) in per_trial.iter().enumerate() {
            if !scaling {
                for r in reports {
                    w.csv(&format!("homog_N{n}_t{}_trial{i}.csv", r.t), |b| r.write_csv(b))?;
                }
            }
            for r in rows {
                out.trials.push(json!({
                    "N": n, "trial": r.trial, "t": r.t,
                    "residual_bulk": r.res_bulk, "bound_bulk": r.bound_bulk,
                    "residual_edge": r.res_edge, "bound_edge": r.bound_edge,
                    "max_normalized": r.max_normalized,
                    "accepted_steps": stats.accepted, "rejected_steps": stats.rejected,
                }));
            }
        }
        for &t in &cfg.t_list {
            let pick = |f: &dyn Fn(&HomogRow) -> f64| -> Vec<f64> {
                per_trial.iter().flat_map(|(rows, _, _)| rows.iter().filter(|r| r.t == t).map(f)).collect()
            };
            let rb = pick(&|r| r.res_bulk);
            let re = pick(&|r| r.res_edge);
            let nb = pick(&|r| r.res_bulk / r.bound_bulk);
            let ne = pick(&|r| r.res_edge / r.bound_edge);
            let bb = residual_bound(n, t, q.rho[bulk - 1]);
            let be = residual_bound(n, t, q.rho[0]);
            out.aggregates.push(Aggregate::of(format!("residual_bulk N={n} t={t}"), &rb));
            out.aggregates.push(Aggregate::of(format!("residual_edge N={n} t={t}"), &re));
            out.aggregates.push(Aggregate::of(format!("normalized_bulk N={n} t={t}"), &nb));
            out.aggregates.push(Aggregate::of(format!("normalized_edge N={n} t={t}"), &ne));
            table.push(vec![n as f64, t, median(&rb), bb, median(&re), be]);
            // below t = 0.1 the window is recorded, not asserted
            if !scaling && t >= 0.1 {
                out.checks.push(Check::at_most(
                    format!("median normalized bulk residual N={n} t={t}"),
                    median(&nb),
                    th.stochastic,
                ));
            }
        }
    }
    w.csv("homog_table.csv", rows_csv("N,t,median_residual_bulk,bound_bulk,median_residual_edge,bound_edge", &table))?;
    if scaling {
        let mut fits = Vec::new();
        for &t in &cfg.t_list {
            let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r[1] == t).collect();
            let ns: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            if ns.len() < 2 {
                return Err(Error::config("n_list", "a scaling fit needs at least two sizes"));
            }
            let (sb, _) = loglog_fit(&ns, &rows.iter().map(|r| r[2]).collect::<Vec<_>>())?;
            let (se, _) = loglog_fit(&ns, &rows.iter().map(|r| r[4]).collect::<Vec<_>>())?;
            let tol = th.slope_tolerance;
            out.checks.push(Check::within(format!("bulk slope t={t}"), sb, Some(-2.0 - tol), Some(-2.0 + tol)));
            let edge = -5.0 / 3.0;
            out.checks.push(Check::within(format!("edge slope t={t}"), se, Some(edge - tol), Some(edge + tol)));
            // at finite N the bound's own slope differs from the limiting exponent
            let (bb, _) = loglog_fit(&ns, &rows.iter().map(|r| r[3]).collect::<Vec<_>>())?;
            let (be, _) = loglog_fit(&ns, &rows.iter().map(|r| r[5]).collect::<Vec<_>>())?;
            out.aggregates.push(Aggregate::of(format!("bound slope bulk t={t}"), &[bb]));
            out.aggregates.push(Aggregate::of(format!("bound slope edge t={t}"), &[be]));
            fits.push(vec![t, sb, -2.0, bb, se, edge, be]);
        }
        w.csv(
            "homog_slopes.csv",
            rows_csv("t,slope_bulk,theory_bulk,bound_slope_bulk,slope_edge,theory_edge,bound_slope_edge", &fits),
        )?;
    }
    Ok(out)
}

/// The `x` grid of the PDE check: five points spanning `[−1.95, 1.95]`.
pub fn pde_grid() -> Vec<f64> {
    (0..5).map(|i| -1.95 + 0.975 * i as f64).collect()
}

fn pde_check(cfg: &ExperimentConfig, w: &RunWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let pv = PvConfig::default();
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let q = SpectralQuantiles::new(n);
        let per_trial = par_trials(cfg.trials, |i| {
            let f = rigidity_scale_difference(n, &mut trial_stream(cfg, n, i).rng());
            let mut r = Vec::new();
            for &t in &cfg.t_list {
                for x in pde_grid() {
                    let dt = ubar_dt(&f, &q, x, t)?;
                    let g = |y: f64| ubar_x(&f, &q, y, t).expect("interior point");
                    let nl = pv_nonlocal(g, x, &pv)?;
                    let rel = (dt - nl).abs() / (dt.abs() + 1e-12);
                    r.push(vec![n as f64, i as f64, t, x, dt, nl, rel]);
                }
            }
            Ok(r)
        })?;
        let rels: Vec<f64> = per_trial.iter().flatten().map(|r| r[6]).collect();
        let worst = rels.iter().cloned().fold(0.0, f64::max);
        out.aggregates.push(Aggregate::of(format!("relative discrepancy N={n}"), &rels));
        out.checks.push(Check::at_most(format!("max relative discrepancy N={n}"), worst, cfg.thresholds.pde_relative));
        for r in per_trial.into_iter().flatten() {
            out.trials.push(json!({"N": n, "trial": r[1] as usize, "t": r[2], "x": r[3], "ubar_dt": r[4], "pv": r[5], "relative": r[6]}));
            rows.push(r);
        }
    }
    w.csv("pde_check.csv", rows_csv("N,trial,t,x,ubar_dt,pv_nonlocal,relative", &rows))?;
    Ok(out)
}

fn regularity(cfg: &ExperimentConfig, w: &RunWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let c = cfg.thresholds.deterministic;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let q = SpectralQuantiles::new(n);
        let per_trial = par_trials(cfg.trials, |i| {
            let f = rigidity_scale_difference(n, &mut trial_stream(cfg, n, i).rng());
            cfg.t_list.iter().map(|&t| regularity_checks(&f, &q, t, c)).collect::<Result<Vec<_>>>()
        })?;
        for (i, reps) in per_trial.iter().enumerate() {
            for r in reps {
                rows.push(vec![
                    n as f64,
                    i as f64,
                    r.t,
                    r.sup.pass_fraction(),
                    r.sup.worst_ratio,
                    r.modulus.pass_fraction(),
                    r.modulus.worst_ratio,
                    r.derivative.pass_fraction(),
                    r.derivative.worst_ratio,
                    r.derivative.checked as f64,
                ]);
                out.trials.push(json!({"N": n, "trial": i, "report": r}));
            }
        }
        for (name, sel) in [
            ("sup", 0usize),
            ("modulus", 1),
            ("derivative", 2),
        ] {
            let fr: Vec<f64> = per_trial
                .iter()
                .flatten()
                .map(|r| [r.sup, r.modulus, r.derivative][sel].pass_fraction())
                .collect();
            let worst: f64 = per_trial
                .iter()
                .flatten()
                .map(|r| [r.sup, r.modulus, r.derivative][sel].worst_ratio)
                .fold(0.0, f64::max);
            out.aggregates.push(Aggregate::of(format!("{name} pass fraction N={n}"), &fr));
            out.checks.push(Check::at_most(format!("{name} bound worst ratio N={n}"), worst, 1.0));
        }
    }
    w.csv(
        "regularity.csv",
        rows_csv(
            "N,trial,t,sup_pass,sup_worst,modulus_pass,modulus_worst,derivative_pass,derivative_worst,derivative_checked",
            &rows,
        ),
    )?;
    Ok(out)
}

/// `T_a = h·ℓ/(N^{1/3}(ℓ+a)^{2/3})`.
pub fn fsp_horizon(n: usize, ell: usize, a: usize, h: f64) -> f64 {
    h * ell as f64 / ((n as f64).cbrt() * ((ell + a) as f64).powf(2.0 / 3.0))
}

/// Number of recorded states used to freeze the generator along `[0, T]`.
const FSP_PATH_POINTS: usize = 128;

fn fsp_check(cfg: &ExperimentConfig, w: &RunWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let th = cfg.thresholds;
    let sg = SemigroupConfig::default();
    for &n in &cfg.n_list {
        let spec = cfg.ensemble(n)?;
        let ell = cfg.ell.min(n);
        let reach = th.fsp_reach * ell;
        let columns = [1usize, n / 2];
        let t_end = fsp_horizon(n, ell, 1, th.fsp_horizon);
        let grid: Vec<f64> = (0..=FSP_PATH_POINTS).map(|i| t_end * i as f64 / FSP_PATH_POINTS as f64).collect();
        let flow = cfg.flow_config(n);
        let per_trial = par_trials(cfg.trials, |i| {
            let s = trial_stream(cfg, n, i);
            let (l0, _) = sample_pair(&spec, &s)?;
            let (path, _) = evolve_single(&l0, t_end, f64::from(cfg.beta), &s.substream(2), &grid, &flow)?;
            let mut worst: f64 = 0.0;
            for &a in &columns {
                let ta = fsp_horizon(n, ell, a, th.fsp_horizon);
                let mut e = DMatrix::zeros(n, 1);
                e[(a - 1, 0)] = 1.0;
                let col = propagate(&path, ell, 0.0, ta, e, &sg)?;
                for j in 1..=n {
                    if j.abs_diff(a) > reach {
                        worst = worst.max(col[(j - 1, 0)].abs());
                    }
                }
            }
            let heat = if i == 0 { Some(evolve_semigroup(&path, ell, 0.0, t_end, &sg)?) } else { None };
            Ok((worst, heat))
        })?;
        let worst: Vec<f64> = per_trial.iter().map(|(v, _)| *v).collect();
        let frac = worst.iter().filter(|v| **v < th.fsp_entry).count() as f64 / worst.len() as f64;
        for (i, v) in worst.iter().enumerate() {
            out.trials.push(json!({"N": n, "trial": i, "max_far_entry": v, "pass": *v < th.fsp_entry}));
        }
        out.aggregates.push(Aggregate::of(format!("max far entry N={n}"), &worst));
        out.checks.push(Check::at_least(format!("fsp pass fraction N={n} ell={ell}"), frac, th.fsp_pass_fraction));
        if let Some(u) = &per_trial[0].1 {
            let mut rows = Vec::with_capacity(n * n);
            for j in 0..n {
                for a in 0..n {
                    rows.push(vec![(j + 1) as f64, (a + 1) as f64, u[(j, a)].abs().max(1e-300).log10()]);
                }
            }
            w.csv(&format!("fsp_heatmap_N{n}.csv"), rows_csv("j,a,log10_abs_u", &rows))?;
        }
    }
    Ok(out)
}

fn gap_coupling(cfg: &ExperimentConfig, w: &RunWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let th = cfg.thresholds;
    let mut rows = Vec::new();
    let mut ks_rows = Vec::new();
    for &n in &cfg.n_list {
        let q = SpectralQuantiles::new(n);
        let spec = cfg.ensemble(n)?;
        let flow = cfg.flow_config(n);
        let n23 = (n as f64).powf(2.0 / 3.0);
        let z = edge_probe(n, cfg.eps1);
        let per_trial = par_trials(cfg.trials, |i| {
            let s = trial_stream(cfg, n, i);
            let (l0, m0) = sample_pair(&spec, &s)?;
            let traj = evolve_coupled(&l0, &m0, cfg.t_max(), f64::from(cfg.beta), &s.substream(2), &cfg.t_list, &flow)?;
            let f = InitialDifference::from_spectra(&l0, &m0)?;
            let initial = GapRecord::from_spectra(i, &l0, &m0)?;
            let mut r = Vec::new();
            for &t in &cfg.t_list {
                let (l, m) = traj.at(t)?;
                let rec = GapRecord::from_spectra(i, &l.x, &m.x)?;
                let ub = ubar_all(&f, &q, t)?;
                let rhs = th.stochastic * n23 * ((ub[0] - ub[1]).abs() + residual_bound(n, t, q.rho[0]));
                let pred = lss_gap_prediction(&l0, &m0, z, t)?;
                r.push((t, rec, rhs, pred, l.x[0] - m.x[0]));
            }
            Ok((initial, r))
        })?;
        for (c, &t) in cfg.t_list.iter().enumerate() {
            let recs: Vec<_> = per_trial.iter().map(|(_, r)| r[c]).collect();
            let pass = recs.iter().filter(|(_, rec, rhs, _, _)| rec.gap_difference() <= *rhs).count();
            let frac = pass as f64 / recs.len() as f64;
            let lss_env = 20.0 * (n as f64).powf(-4.0 / 3.0 + 0.1);
            let lss_frac = recs.iter().filter(|(_, _, _, p, a)| (p - a).abs() <= lss_env).count() as f64 / recs.len() as f64;
            for (_, rec, rhs, pred, actual) in &recs {
                out.trials.push(json!({
                    "N": n, "trial": rec.trial, "t": t, "record": rec,
                    "gap_difference": rec.gap_difference(), "bound": rhs,
                    "lss_prediction": pred, "lambda1_minus_mu1": actual,
                }));
                rows.push(vec![
                    n as f64, rec.trial as f64, t, rec.gap_lambda, rec.gap_mu, rec.top_lambda, rec.top_mu,
                    rec.gap_difference(), *rhs, *pred, *actual,
                ]);
            }
            let diffs: Vec<f64> = recs.iter().map(|(_, r, _, _, _)| r.gap_difference()).collect();
            let gl: Vec<f64> = recs.iter().map(|(_, r, _, _, _)| r.gap_lambda).collect();
            let gm: Vec<f64> = recs.iter().map(|(_, r, _, _, _)| r.gap_mu).collect();
            let gl0: Vec<f64> = per_trial.iter().map(|(g, _)| g.gap_lambda).collect();
            let gm0: Vec<f64> = per_trial.iter().map(|(g, _)| g.gap_mu).collect();
            // reported only: the KS estimator noise is of order trials^{-1/2}
            let ks_t = ks_distance(&gl, &gm);
            let ks_0 = ks_distance(&gl0, &gm0);
            ks_rows.push(vec![n as f64, t, ks_0, ks_t, median(&diffs)]);
            out.aggregates.push(Aggregate::of(format!("scaled gap difference N={n} t={t}"), &diffs));
            out.aggregates.push(Aggregate::of(format!("lss envelope pass N={n} t={t}"), &[lss_frac]));
            out.checks.push(Check::at_least(format!("gap bound pass fraction N={n} t={t}"), frac, th.gap_pass_fraction));
        }
    }
    w.csv(
        "gap_coupling.csv",
        rows_csv("N,trial,t,gap_lambda,gap_mu,top_lambda,top_mu,gap_difference,bound,lss_prediction,lambda1_minus_mu1", &rows),
    )?;
    w.csv("gap_ks.csv", rows_csv("N,t,ks_initial,ks_at_t,median_gap_difference", &ks_rows))?;
    Ok(out)
}

fn mean_shift(cfg: &ExperimentConfig, w: &RunWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let th = cfg.thresholds;
    let s4 = fourth_cumulant(cfg.entry_law);
    let mut summary = Vec::new();
    let mut at_tmax = Vec::new();
    let ts = {
        let mut v = cfg.t_list.clone();
        v.sort_by(f64::total_cmp);
        v
    };
    for &n in &cfg.n_list {
        let spec = cfg.ensemble(n)?;
        let stream = RngStream::new(cfg.seed, cfg.experiment.stream_id()).substream(n as u64);
        let run = mean_shift_estimate(&spec, &ts, cfg.trials, &stream, &cfg.flow_config(n))?;
        for (set, est) in run.samples.iter().zip(&run.estimates) {
            w.csv(&format!("mean_shift_N{n}_t{}.csv", est.t), |b| set.write_csv(b))?;
            out.aggregates.push(Aggregate::of(format!("shift N={n} t={}", est.t), &set.values));
            summary.push(*est);
            if s4 == 0.0 {
                out.checks.push(Check::at_most(
                    format!("|estimate|/stderr N={n} t={}", est.t),
                    est.estimate.abs() / est.stderr,
                    3.0,
                ));
            } else {
                out.checks.push(Check::at_least(
                    format!("signed z-score N={n} t={}", est.t),
                    est.estimate * s4.signum() / est.stderr,
                    2.0,
                ));
            }
        }
        for i in 0..cfg.trials {
            let values: Vec<f64> = run.samples.iter().map(|s| s.values[i]).collect();
            out.trials.push(json!({"N": n, "trial": i, "t": ts, "values": values}));
        }
        if ts.len() >= 2 && s4 != 0.0 {
            let (a, b) = (&run.samples[0].values, &run.samples[ts.len() - 1].values);
            let (r, se) = paired_ratio(a, b)?;
            let expect = (2.0 * (ts[ts.len() - 1] - ts[0])).exp();
            out.checks.push(Check::at_most(
                format!("ratio t={}/t={} N={n}: |r − {expect:.4}|/stderr", ts[0], ts[ts.len() - 1]),
                (r - expect).abs() / se,
                3.0,
            ));
            out.aggregates.push(Aggregate::of(format!("ratio N={n}"), &[r]));
        }
        at_tmax.push((n as f64, *run.estimates.last().expect("nonempty")));
    }
    if at_tmax.len() >= 2 && s4 != 0.0 {
        let ns: Vec<f64> = at_tmax.iter().map(|(n, _)| *n).collect();
        let mags: Vec<f64> = at_tmax.iter().map(|(_, e)| e.estimate * s4.signum()).collect();
        if mags.iter().all(|m| *m > 0.0) {
            let (slope, _) = loglog_fit(&ns, &mags)?;
            let tol = th.mean_shift_slope_tolerance;
            out.checks.push(Check::within("N exponent", slope, Some(-1.0 / 3.0 - tol), Some(-1.0 / 3.0 + tol)));
        } else {
            out.checks.push(Check::within("N exponent", f64::NAN, None, None));
        }
    }
    w.json("mean_shift_summary.json", &json!({ "estimates": summary, "s4": s4 }))?;
    Ok(out)
}

/// Overall verdict of a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryStatus {
    Pass,
    Fail,
    NoData,
}

/// Aggregate table over several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub text: String,
    pub csv: String,
    pub status: SummaryStatus,
}

/// Groups records by experiment and lists aggregates and checks.
pub fn summarize(records: &[RunRecord]) -> Summary {
    let rows: Vec<&RunRecord> = records.iter().filter(|r| !r.aggregates.is_empty() || !r.checks.is_empty()).collect();
    if rows.is_empty() {
        return Summary {
            text: "no data\n".into(),
            csv: "kind,config_hash,name,count,mean,median,stderr,value,pass\nno data\n".into(),
            status: SummaryStatus::NoData,
        };
    }
    let mut text = String::new();
    let mut csv = String::from("kind,config_hash,name,count,mean,median,stderr,value,pass\n");
    let mut kinds: Vec<ExperimentKind> = rows.iter().map(|r| r.experiment).collect();
    kinds.sort();
    kinds.dedup();
    let mut all_pass = true;
    for kind in kinds {
        text.push_str(&format!("== {kind} ==\n"));
        for r in rows.iter().filter(|r| r.experiment == kind) {
            let h = &r.config_hash[..HASH_PREFIX];
            text.push_str(&format!("run {h} (seed {})\n", r.seed));
            for a in &r.aggregates {
                text.push_str(&format!(
                    "  {:<48} n={:<5} mean={:<12.4e} median={:<12.4e} stderr={:.2e}\n",
                    a.name, a.count, a.mean, a.median, a.stderr
                ));
                csv.push_str(&format!("{kind},{h},{},{},{},{},{},,\n", a.name, a.count, a.mean, a.median, a.stderr));
            }
            for c in &r.checks {
                let bounds = match (c.lower, c.upper) {
                    (Some(l), Some(u)) => format!("in [{l:.4}, {u:.4}]"),
                    (Some(l), None) => format!(">= {l:.4}"),
                    (None, Some(u)) => format!("<= {u:.4}"),
                    (None, None) => "finite".into(),
                };
                text.push_str(&format!(
                    "  {} {:<48} {:.4e} {bounds}\n",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value
                ));
                csv.push_str(&format!("{kind},{h},{},,,,,{},{}\n", c.name, c.value, c.pass));
                all_pass &= c.pass;
            }
        }
    }
    Summary {
        text,
        csv,
        status: if all_pass { SummaryStatus::Pass } else { SummaryStatus::Fail },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(r#"{"experiment":"pde-check","seed":1}"#).unwrap();
        assert_eq!(c.n_list, vec![500]);
        assert_eq!(c.t_list, vec![0.5]);
        assert_eq!(c, ExperimentConfig::new(ExperimentKind::PdeCheck, 1));
    }

    #[test]
    fn config_errors() {
        assert!(matches!(parse_config_str(r#"{"experiment":"pde-check"}"#), Err(Error::Config { .. })));
        assert!(parse_config_str(r#"{"experiment":"pde-check","seed":1,"trials":0}"#).is_err());
        assert!(parse_config_str(r#"{"experiment":"pde-check","seed":1,"bogus":2}"#).is_err());
        assert!(parse_config_str(r#"{"experiment":"nope","seed":1}"#).is_err());
        match parse_config_str(r#"{"experiment":"pde-check","seed":1,"thresholds":{"stochastic":"x"}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "thresholds.stochastic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_nested_objects_keep_other_defaults() {
        let c = parse_config_str(
            r#"{"experiment":"homog-scaling","seed":7,"n_list":[250,500,1000],"t_list":[0.5],"trials":20,
                "beta":1,"entry_law":"rademacher","profile":"flat",
                "thresholds":{"slope_tolerance":0.35},"flow":{"band":2,"dt_scale":1.0}}"#,
        )
        .unwrap();
        assert_eq!(c.thresholds, Thresholds::default());
        assert_eq!(c.flow, FlowSettings::default());
        assert_eq!(c.trials, 20);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::new(ExperimentKind::Regularity, 3);
        let h = a.hash();
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.seed = 4;
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn kinds_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
    }

    #[test]
    fn summary_markers() {
        assert_eq!(summarize(&[]).status, SummaryStatus::NoData);
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::new(ExperimentKind::Regularity, 1);
        c.n_list = vec![60];
        c.trials = 2;
        c.output_dir = Some(dir.path().into());
        let r = run(&c, Some(1)).unwrap();
        let s = summarize(std::slice::from_ref(&r));
        assert_eq!(s.status, if r.passed() { SummaryStatus::Pass } else { SummaryStatus::Fail });
        assert!(s.text.contains("== regularity =="));
    }

    #[test]
    fn check_bounds() {
        assert!(Check::within("x", 1.0, Some(0.0), Some(2.0)).pass);
        assert!(!Check::at_most("x", 3.0, 2.0).pass);
        assert!(!Check::at_least("x", f64::NAN, 0.0).pass);
    }
}
