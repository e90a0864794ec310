//! Experiment orchestration: prelimit replicates against fluid solutions
//! (law of large numbers closeness) or against limit-SDE replicates
//! (fluctuation marginals, compared cell by cell with two-sample KS).
//!
//! Replicates are independent jobs scheduled across a worker pool
//! (`JSQD_WORKERS` caps the thread count); results are folded in replicate
//! order, so reports are bit-reproducible from `(config, seed)` regardless
//! of scheduling.
//!
//! A fluctuation run is gated: the measured regime diagnostics must match
//! the configured expectation, otherwise the experiment aborts instead of
//! silently comparing against the wrong limit system.

use crate::ctmc::{self, Backend, InitSpec, SimConfig};
use crate::fixed_point::{mu_sequence, DEFAULT_FLOOR};
use crate::fluid;
use crate::path::{fmt_sig, uniform_grid};
use crate::regime::{classify_params, Classification, LimitRegime, RegimeThresholds};
use crate::sde::{self, LimitSystemSpec, SdeConfig};
use crate::stats::{ks_p_value, ks_two_sample, mean_variance, quantile};
use crate::{Error, Result, SystemParams};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Limit-side replicates use stream indices offset by this, so they are
/// independent of the prelimit streams under the same seed.
pub const LIMIT_STREAM_OFFSET: u64 = 1 << 32;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(text) = std::env::var("JSQD_WORKERS") {
        match text.trim().parse::<usize>() {
            Ok(w) if w > 0 => builder = builder.num_threads(w),
            _ => {
                return Err(Error::Config(format!(
                    "JSQD_WORKERS must be a positive integer, got `{text}`"
                )));
            }
        }
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExpectedRegime {
    Sub,
    Critical,
    Super,
}

impl ExpectedRegime {
    fn matches(&self, regime: &LimitRegime) -> bool {
        matches!(
            (self, regime),
            (ExpectedRegime::Sub, LimitRegime::SubRootN { .. })
                | (ExpectedRegime::Critical, LimitRegime::CriticalRootN { .. })
                | (ExpectedRegime::Super, LimitRegime::SuperRootN { .. })
        )
    }
}

/// A parameter that is either taken from the measured diagnostics or
/// pinned explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AutoOr {
    Auto,
    Value(f64),
}

impl AutoOr {
    fn resolve(&self, auto: f64) -> f64 {
        match self {
            AutoOr::Auto => auto,
            AutoOr::Value(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LlnExperiment {
    pub params: SystemParams,
    pub init: InitSpec,
    pub t_end: f64,
    pub grid_dt: f64,
    pub replicates: u64,
    pub seed: u64,
    pub coords: usize,
    pub fluid_dt: f64,
    pub backend: Backend,
}

#[derive(Debug, Clone, Serialize)]
pub struct LlnBlock {
    /// `sup_t ( sum_tracked |G_i - g_i| + prelimit tail mass )` per replicate.
    pub sup_l1_per_replicate: Vec<f64>,
    pub median: f64,
    pub p90: f64,
}

pub fn run_lln_experiment(exp: &LlnExperiment) -> Result<(LlnBlock, ctmc::MartingaleCheckReport)> {
    let init_occ = exp.init.resolve(&exp.params)?;
    let fluid_init = init_occ.fractions();
    let fluid_path = fluid::integrate_reflected(
        exp.params.lambda,
        &fluid_init,
        exp.t_end,
        exp.fluid_dt,
        exp.coords,
    )?;
    let grid = uniform_grid(exp.t_end, exp.grid_dt)?;
    // fluid reference values on the comparison grid
    let fluid_at: Vec<Vec<f64>> = (0..exp.coords)
        .map(|c| {
            grid.iter()
                .map(|&t| fluid_path.g.value_at(c, t + 1e-9))
                .collect()
        })
        .collect();

    let reps: Vec<u64> = (0..exp.replicates).collect();
    let pool = worker_pool()?;
    let per_rep: Vec<(f64, f64)> = pool.install(|| {
        reps.par_iter()
            .map(|&rep| -> Result<(f64, f64)> {
                let cfg = SimConfig {
                    t_end: exp.t_end,
                    grid_dt: exp.grid_dt,
                    seed: exp.seed,
                    replicate: rep,
                    coords: exp.coords,
                };
                let out = match exp.backend {
                    Backend::Occupancy => ctmc::simulate_path(&exp.params, &exp.init, &cfg)?,
                    Backend::PerQueue => ctmc::per_queue_simulate(&exp.params, &exp.init, &cfg)?,
                };
                let nf = exp.params.n as f64;
                let mut sup = 0.0f64;
                for j in 0..out.path.len() {
                    let mut l1 = 0.0;
                    let mut tracked_mass = 0.0;
                    for c in 0..exp.coords {
                        let g_sim = out.path.values[c][j];
                        tracked_mass += g_sim;
                        l1 += (g_sim - fluid_at[c][j]).abs();
                    }
                    // exact prelimit mass beyond the tracked coordinates
                    let tail = out.events.jobs_grid[j] as f64 / nf - tracked_mass;
                    sup = sup.max(l1 + tail.max(0.0));
                }
                Ok((sup, out.martingale.sup_mart_l2_sq))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let sups: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
    let mart_sups: Vec<f64> = per_rep.iter().map(|r| r.1).collect();
    Ok((
        LlnBlock {
            median: quantile(&sups, 0.5),
            p90: quantile(&sups, 0.9),
            sup_l1_per_replicate: sups,
        },
        ctmc::martingale_check(&mart_sups, &exp.params, exp.t_end),
    ))
}

#[derive(Debug, Clone)]
pub struct FluctuationExperiment {
    pub params: SystemParams,
    pub expected: ExpectedRegime,
    pub init: InitSpec,
    pub t_end: f64,
    pub grid_dt: f64,
    pub sde_dt: f64,
    pub replicates_prelimit: u64,
    pub replicates_limit: u64,
    pub seed: u64,
    /// Coordinates simulated on the prelimit side.
    pub coords: usize,
    /// Truncation index of the limit system.
    pub r: usize,
    /// Sub regime only; `None` takes the classifier's `k`.
    pub k: Option<usize>,
    pub alpha: AutoOr,
    pub c: AutoOr,
    pub thresholds: RegimeThresholds,
    pub comparison_times: Vec<f64>,
    /// 1-based coordinates of the compared process (`Y` in the sub regime,
    /// `Z` otherwise).
    pub comparison_coords: Vec<usize>,
    pub ks_max: f64,
    pub bonferroni_level: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KsCell {
    pub coord: usize,
    pub time: f64,
    pub d: f64,
    pub p_value: f64,
    pub n_prelimit: usize,
    pub n_limit: usize,
    pub mean_prelimit: f64,
    pub var_prelimit: f64,
    pub mean_limit: f64,
    pub var_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub mode: String,
    pub regime: Option<Classification>,
    pub limit_spec: Option<LimitSystemSpec>,
    pub cells: Vec<KsCell>,
    pub lln: Option<LlnBlock>,
    pub martingale: Option<ctmc::MartingaleCheckReport>,
    /// `sqrt(n) (1 - lambda)`: hard pathwise bound on `Z_1`.
    pub barrier_bound: Option<f64>,
    pub barrier_ok: Option<bool>,
    pub ks_max: f64,
    pub bonferroni_level: f64,
    pub passed: bool,
    pub notes: Vec<String>,
}

const TOLERANCE_NOTE: &str =
    "tolerances are calibrated regression bounds at desk scale, not asymptotic convergence rates";

pub fn run_fluctuation_experiment(exp: &FluctuationExperiment) -> Result<ComparisonReport> {
    let params = exp.params;
    if !(params.lambda < 1.0) {
        return Err(Error::Config(
            "fluctuation comparisons need lambda < 1 (mu must exist)".into(),
        ));
    }
    let classification = classify_params(&params, &exp.thresholds)?;
    if !exp.expected.matches(&classification.regime) {
        return Err(Error::RegimeGate(format!(
            "expected {:?} but measured {:?} (diagnostics: {})",
            exp.expected,
            classification.regime,
            serde_json::to_string(&classification.diagnostics).unwrap_or_default()
        )));
    }
    let diag = &classification.diagnostics;
    let mu = mu_sequence(&params, DEFAULT_FLOOR)?;
    let init_occ = exp.init.resolve(&params)?;

    // limit system from measured diagnostics unless pinned
    let sqrt_n = params.sqrt_n();
    let init_frac = init_occ.fractions();
    let z: Vec<f64> = (1..=exp.r)
        .map(|i| sqrt_n * (init_frac.get(i - 1).copied().unwrap_or(0.0) - mu.get(i)))
        .collect();
    let (limit_spec, shift_k) = match classification.regime {
        LimitRegime::SubRootN { k: measured_k, .. } => {
            let k = exp.k.unwrap_or(measured_k);
            let alpha_auto = diag.beta_prime_head.get(k - 1).copied().unwrap_or(0.0);
            let spec = LimitSystemSpec::subcritical(k, exp.alpha.resolve(alpha_auto), z)?;
            (spec, k)
        }
        LimitRegime::CriticalRootN { c, alpha } => {
            let spec = LimitSystemSpec::critical(exp.c.resolve(c), exp.alpha.resolve(alpha), z)?;
            (spec, 1)
        }
        LimitRegime::SuperRootN { alpha } => {
            let spec = LimitSystemSpec::supercritical(exp.alpha.resolve(alpha.max(0.0)), z)?;
            (spec, 1)
        }
        LimitRegime::Ambiguous { ratio } => {
            return Err(Error::RegimeGate(format!(
                "measured ratio {ratio} is ambiguous; refusing to pick a limit system"
            )));
        }
    };

    let max_coord = exp.comparison_coords.iter().copied().max().unwrap_or(1);
    if exp.coords < shift_k + max_coord - 1 {
        return Err(Error::Config(format!(
            "prelimit coords = {} too small for comparison coordinate {} with k = {shift_k}",
            exp.coords, max_coord
        )));
    }
    validate_times(&exp.comparison_times, exp.grid_dt, exp.t_end)?;

    let barrier = sqrt_n * (1.0 - params.lambda);
    let cells_n = exp.comparison_coords.len() * exp.comparison_times.len();
    let pool = worker_pool()?;

    // prelimit side
    struct RepOut {
        cell_values: Vec<f64>,
        barrier_ok: bool,
        mart_sup: f64,
    }
    let reps: Vec<u64> = (0..exp.replicates_prelimit).collect();
    let prelimit: Vec<RepOut> = pool.install(|| {
        reps.par_iter()
            .map(|&rep| -> Result<RepOut> {
                let cfg = SimConfig {
                    t_end: exp.t_end,
                    grid_dt: exp.grid_dt,
                    seed: exp.seed,
                    replicate: rep,
                    coords: exp.coords,
                };
                let out = ctmc::simulate_path(&params, &exp.init, &cfg)?;
                let z_path = ctmc::scaled_path(&out.path, &mu);
                // exact consequence of G_1 <= 1: same float expression on
                // both sides, so the comparison needs no tolerance
                let barrier_ok = z_path.coord(0).iter().all(|&v| v <= barrier);
                let y_path = ctmc::y_shift(&z_path, shift_k)?;
                let mut cell_values = Vec::with_capacity(cells_n);
                for &coord in &exp.comparison_coords {
                    for &t in &exp.comparison_times {
                        cell_values.push(y_path.value_at(coord - 1, t + 1e-9));
                    }
                }
                Ok(RepOut {
                    cell_values,
                    barrier_ok,
                    mart_sup: out.martingale.sup_mart_l2_sq,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // limit side
    let lreps: Vec<u64> = (0..exp.replicates_limit).collect();
    let limit: Vec<Vec<f64>> = pool.install(|| {
        lreps
            .par_iter()
            .map(|&rep| -> Result<Vec<f64>> {
                let run = sde::simulate(
                    &limit_spec,
                    &SdeConfig {
                        t_end: exp.t_end,
                        dt: exp.sde_dt,
                        seed: exp.seed,
                        replicate: LIMIT_STREAM_OFFSET + rep,
                    },
                )?;
                let mut vals = Vec::with_capacity(cells_n);
                for &coord in &exp.comparison_coords {
                    for &t in &exp.comparison_times {
                        let row = coord - 1;
                        let v = if row < run.path.n_coords() {
                            run.path.value_at(row, t + 1e-9)
                        } else {
                            0.0
                        };
                        vals.push(v);
                    }
                }
                Ok(vals)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // fold in replicate order
    let mut cells = Vec::with_capacity(cells_n);
    let mut all_pass = true;
    let barrier_ok = prelimit.iter().all(|r| r.barrier_ok);
    let mart_sups: Vec<f64> = prelimit.iter().map(|r| r.mart_sup).collect();
    let martingale = ctmc::martingale_check(&mart_sups, &params, exp.t_end);
    let mut idx = 0;
    for &coord in &exp.comparison_coords {
        for &t in &exp.comparison_times {
            let a: Vec<f64> = prelimit.iter().map(|r| r.cell_values[idx]).collect();
            let b: Vec<f64> = limit.iter().map(|r| r[idx]).collect();
            let d = ks_two_sample(&a, &b)?;
            let p = ks_p_value(d, a.len(), b.len());
            let (ma, va) = mean_variance(&a);
            let (mb, vb) = mean_variance(&b);
            if d > exp.ks_max || p < exp.bonferroni_level / cells_n as f64 {
                all_pass = false;
            }
            cells.push(KsCell {
                coord,
                time: t,
                d,
                p_value: p,
                n_prelimit: a.len(),
                n_limit: b.len(),
                mean_prelimit: ma,
                var_prelimit: va,
                mean_limit: mb,
                var_limit: vb,
            });
            idx += 1;
        }
    }

    Ok(ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: "fluctuation".into(),
        regime: Some(classification),
        limit_spec: Some(limit_spec),
        cells,
        lln: None,
        barrier_bound: Some(barrier),
        barrier_ok: Some(barrier_ok),
        ks_max: exp.ks_max,
        bonferroni_level: exp.bonferroni_level,
        passed: all_pass && barrier_ok && !martingale.violation,
        martingale: Some(martingale),
        notes: vec![TOLERANCE_NOTE.into()],
    })
}

fn validate_times(times: &[f64], grid_dt: f64, t_end: f64) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Config("no comparison times".into()));
    }
    for &t in times {
        if t <= 0.0 || t > t_end + 1e-9 {
            return Err(Error::Config(format!(
                "comparison time {t} outside (0, {t_end}]"
            )));
        }
        let steps = t / grid_dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "comparison time {t} is not on the output grid (grid_dt = {grid_dt})"
            )));
        }
    }
    Ok(())
}

/// Writes `<base>.json` (full report) and `<base>.csv` (flat KS table,
/// header `coord,time,D,nA,nB`). Byte-stable for identical reports.
pub fn emit_report(report: &ComparisonReport, base: &Path) -> Result<(PathBuf, PathBuf)> {
    let json_path = base.with_extension("json");
    let csv_path = base.with_extension("csv");
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(&json_path, json)
        .map_err(|e| Error::Config(format!("writing {}: {e}", json_path.display())))?;

    let mut csv = Vec::new();
    writeln!(csv, "coord,time,D,nA,nB")?;
    for c in &report.cells {
        writeln!(
            csv,
            "{},{},{},{},{}",
            c.coord,
            fmt_sig(c.time, 12),
            fmt_sig(c.d, 12),
            c.n_prelimit,
            c.n_limit
        )?;
    }
    std::fs::write(&csv_path, csv)
        .map_err(|e| Error::Config(format!("writing {}: {e}", csv_path.display())))?;
    Ok((json_path, csv_path))
}

// ---------------------------------------------------------------------
// flat `key = value` configuration with [sections]

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(Error::Parse(format!(
                        "line {}: malformed section header `{line}`",
                        lineno + 1
                    )));
                }
                current = line[1..line.len() - 1].trim().to_string();
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            cfg.sections
                .entry(current.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: bad number `{v}`"))),
        }
    }

    fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: bad integer `{v}`"))),
        }
    }
}

/// Parses the CLI/config init syntax `empty | mu | fixed:K[:G] | file:PATH`.
pub fn parse_init(text: &str) -> Result<InitSpec> {
    if text == "empty" {
        return Ok(InitSpec::Empty);
    }
    if text == "mu" {
        return Ok(InitSpec::NearMu);
    }
    if let Some(rest) = text.strip_prefix("fixed:") {
        let mut parts = rest.splitn(2, ':');
        let k: usize = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::Config(format!("bad init `{text}`")))?;
        let gamma = match parts.next() {
            Some(g) => g
                .parse()
                .map_err(|_| Error::Config(format!("bad init `{text}`")))?,
            None => 0.0,
        };
        return Ok(InitSpec::FluidPoint {
            k,
            gamma_coeff: gamma,
        });
    }
    if let Some(path) = text.strip_prefix("file:") {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("init file {path}: {e}")))?;
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("init file {path}: bad value `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(InitSpec::Explicit(vals));
    }
    Err(Error::Config(format!(
        "init must be empty | mu | fixed:K[:G] | file:PATH, got `{text}`"
    )))
}

fn parse_auto_or(text: Option<&str>, what: &str) -> Result<AutoOr> {
    match text {
        None | Some("auto") => Ok(AutoOr::Auto),
        Some("inf") | Some("+inf") => Ok(AutoOr::Value(f64::INFINITY)),
        Some(v) => v
            .parse()
            .map(AutoOr::Value)
            .map_err(|_| Error::Config(format!("{what}: bad value `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{what}: bad entry `{v}`")))
        })
        .collect()
}

#[derive(Debug)]
pub enum ConfiguredExperiment {
    Fluctuation(FluctuationExperiment),
    Lln { exp: LlnExperiment, p90_max: f64 },
}

pub fn experiment_from_config(text: &str) -> Result<ConfiguredExperiment> {
    let raw = RawConfig::parse(text)?;
    let n = raw
        .get("system", "n")
        .ok_or_else(|| Error::Config("[system] n is required".into()))?
        .parse::<u64>()
        .map_err(|_| Error::Config("[system] n: bad integer".into()))?;
    let d_text = raw
        .get("system", "d")
        .ok_or_else(|| Error::Config("[system] d is required".into()))?;
    let lambda_text = raw
        .get("system", "lambda")
        .ok_or_else(|| Error::Config("[system] lambda is required".into()))?;
    let rule = crate::expr::ParamRule::parse(d_text, lambda_text)?;
    let params = SystemParams::new(n, rule.d_at(n)?, rule.lambda_at(n)?)?;

    let init = parse_init(raw.get("prelimit", "init").unwrap_or("mu"))?;
    let t_end = raw.f64_or("prelimit", "t_end", 2.0)?;
    let grid_dt = raw.f64_or("prelimit", "grid_dt", 0.1)?;
    let replicates = raw.u64_or("prelimit", "replicates", 200)?;
    let seed = raw.u64_or("prelimit", "seed", 1)?;
    let coords = raw.u64_or("prelimit", "coords", 8)? as usize;
    let backend = match raw.get("prelimit", "backend").unwrap_or("occupancy") {
        "occupancy" => Backend::Occupancy,
        "perqueue" => Backend::PerQueue,
        other => {
            return Err(Error::Config(format!(
                "[prelimit] backend must be occupancy|perqueue, got `{other}`"
            )));
        }
    };

    let mode = raw.get("comparison", "mode").unwrap_or("fluctuation");
    match mode {
        "lln" => {
            let exp = LlnExperiment {
                params,
                init,
                t_end,
                grid_dt,
                replicates,
                seed,
                coords,
                fluid_dt: raw.f64_or("limit", "dt", 1e-3)?,
                backend,
            };
            let p90_max = raw.f64_or("comparison", "lln_p90_max", 0.05)?;
            Ok(ConfiguredExperiment::Lln { exp, p90_max })
        }
        "fluctuation" => {
            let expected = match raw.get("limit", "regime") {
                Some("sub") => ExpectedRegime::Sub,
                Some("critical") => ExpectedRegime::Critical,
                Some("super") => ExpectedRegime::Super,
                other => {
                    return Err(Error::Config(format!(
                        "[limit] regime must be sub|critical|super, got {other:?}"
                    )));
                }
            };
            let k = match raw.get("limit", "k") {
                None | Some("auto") => None,
                Some(v) => Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("[limit] k: bad integer `{v}`")))?,
                ),
            };
            let exp = FluctuationExperiment {
                params,
                expected,
                init,
                t_end,
                grid_dt,
                sde_dt: raw.f64_or("limit", "dt", 1e-3)?,
                replicates_prelimit: replicates,
                replicates_limit: raw.u64_or("limit", "replicates", replicates)?,
                seed,
                coords,
                r: raw.u64_or("limit", "r", 2)? as usize,
                k,
                alpha: parse_auto_or(raw.get("limit", "alpha"), "[limit] alpha")?,
                c: parse_auto_or(raw.get("limit", "c"), "[limit] c")?,
                thresholds: RegimeThresholds::default(),
                comparison_times: parse_list(
                    raw.get("comparison", "times").unwrap_or("0.5,1,2"),
                    "[comparison] times",
                )?,
                comparison_coords: parse_list(
                    raw.get("comparison", "coords").unwrap_or("1,2"),
                    "[comparison] coords",
                )?,
                ks_max: raw.f64_or("comparison", "ks_max", 0.2)?,
                bonferroni_level: raw.f64_or("comparison", "bonferroni", 0.01)?,
            };
            Ok(ConfiguredExperiment::Fluctuation(exp))
        }
        other => Err(Error::Config(format!(
            "[comparison] mode must be fluctuation|lln, got `{other}`"
        ))),
    }
}

/// Runs a configured experiment and assembles the final report.
pub fn run_configured(text: &str) -> Result<ComparisonReport> {
    match experiment_from_config(text)? {
        ConfiguredExperiment::Fluctuation(exp) => run_fluctuation_experiment(&exp),
        ConfiguredExperiment::Lln { exp, p90_max } => {
            let (block, martingale) = run_lln_experiment(&exp)?;
            let passed = block.p90 <= p90_max && !martingale.violation;
            Ok(ComparisonReport {
                schema_version: REPORT_SCHEMA_VERSION,
                mode: "lln".into(),
                regime: None,
                limit_spec: None,
                cells: Vec::new(),
                lln: Some(block),
                martingale: Some(martingale),
                barrier_bound: None,
                barrier_ok: None,
                ks_max: 0.0,
                bonferroni_level: 0.0,
                passed,
                notes: vec![TOLERANCE_NOTE.into()],
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_config_parsing() {
        let cfg = RawConfig::parse(
            "# comment\n[system]\nn = 100\nd = sqrt n\n\n[comparison]\ntimes = 0.5, 1\n",
        )
        .unwrap();
        assert_eq!(cfg.get("system", "n"), Some("100"));
        assert_eq!(cfg.get("system", "d"), Some("sqrt n"));
        assert_eq!(cfg.get("comparison", "times"), Some("0.5, 1"));
        assert!(cfg.get("system", "missing").is_none());
        assert!(RawConfig::parse("[broken\n").is_err());
        assert!(RawConfig::parse("noequals\n").is_err());
    }

    #[test]
    fn init_parsing() {
        assert!(matches!(parse_init("empty").unwrap(), InitSpec::Empty));
        assert!(matches!(parse_init("mu").unwrap(), InitSpec::NearMu));
        match parse_init("fixed:2:0.25").unwrap() {
            InitSpec::FluidPoint { k, gamma_coeff } => {
                assert_eq!(k, 2);
                assert_eq!(gamma_coeff, 0.25);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_init("bogus").is_err());
    }

    #[test]
    fn emit_report_is_byte_stable() {
        let report = ComparisonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: "fluctuation".into(),
            regime: None,
            limit_spec: None,
            cells: vec![KsCell {
                coord: 1,
                time: 0.5,
                d: 0.5,
                p_value: 0.1,
                n_prelimit: 10,
                n_limit: 10,
                mean_prelimit: 0.0,
                var_prelimit: 1.0,
                mean_limit: 0.1,
                var_limit: 0.9,
            }],
            lln: None,
            martingale: None,
            barrier_bound: Some(1.0),
            barrier_ok: Some(true),
            ks_max: 0.2,
            bonferroni_level: 0.01,
            passed: false,
            notes: vec![],
        };
        let dir = std::env::temp_dir().join("jsqd_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("report");
        let (j1, c1) = emit_report(&report, &base).unwrap();
        let json1 = std::fs::read(&j1).unwrap();
        let csv1 = std::fs::read(&c1).unwrap();
        emit_report(&report, &base).unwrap();
        assert_eq!(std::fs::read(&j1).unwrap(), json1);
        assert_eq!(std::fs::read(&c1).unwrap(), csv1);
        let text = String::from_utf8(csv1).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("coord,time,D,nA,nB"));
        assert_eq!(
            lines.next(),
            Some("1,5.00000000000e-1,5.00000000000e-1,10,10")
        );
    }

    #[test]
    fn emit_report_empty_cells() {
        let report = ComparisonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: "lln".into(),
            regime: None,
            limit_spec: None,
            cells: vec![],
            lln: None,
            martingale: None,
            barrier_bound: None,
            barrier_ok: None,
            ks_max: 0.0,
            bonferroni_level: 0.0,
            passed: true,
            notes: vec![],
        };
        let dir = std::env::temp_dir().join("jsqd_report_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let (j, _) = emit_report(&report, &dir.join("r")).unwrap();
        let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(j).unwrap()).unwrap();
        assert!(parsed["cells"].as_array().unwrap().is_empty());
    }

    #[test]
    fn regime_gate_aborts_on_mismatch() {
        let exp = FluctuationExperiment {
            params: SystemParams::new(10_000, 100, 0.95).unwrap(), // critical ratio
            expected: ExpectedRegime::Super,
            init: InitSpec::NearMu,
            t_end: 0.5,
            grid_dt: 0.1,
            sde_dt: 1e-2,
            replicates_prelimit: 4,
            replicates_limit: 4,
            seed: 1,
            coords: 4,
            r: 2,
            k: None,
            alpha: AutoOr::Auto,
            c: AutoOr::Auto,
            thresholds: RegimeThresholds::default(),
            comparison_times: vec![0.5],
            comparison_coords: vec![1],
            ks_max: 0.5,
            bonferroni_level: 0.01,
        };
        match run_fluctuation_experiment(&exp) {
            Err(Error::RegimeGate(msg)) => assert!(msg.contains("diagnostics")),
            other => panic!("expected regime gate, got {other:?}"),
        }
    }

    #[test]
    fn small_fluctuation_run_end_to_end() {
        let exp = FluctuationExperiment {
            params: SystemParams::new(400, 20, 0.85).unwrap(), // ratio 1: critical
            expected: ExpectedRegime::Critical,
            init: InitSpec::NearMu,
            t_end: 1.0,
            grid_dt: 0.25,
            sde_dt: 1e-2,
            replicates_prelimit: 30,
            replicates_limit: 30,
            seed: 7,
            coords: 5,
            r: 2,
            k: None,
            alpha: AutoOr::Auto,
            c: AutoOr::Auto,
            thresholds: RegimeThresholds::default(),
            comparison_times: vec![0.5, 1.0],
            comparison_coords: vec![1, 2],
            ks_max: 1.0, // machinery test, not a statistical claim
            bonferroni_level: 0.0,
        };
        let report = run_fluctuation_experiment(&exp).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert_eq!(report.barrier_ok, Some(true));
        assert!(report.cells.iter().all(|c| (0.0..=1.0).contains(&c.d)));
        // deterministic re-run
        let report2 = run_fluctuation_experiment(&exp).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&report2).unwrap()
        );
    }

    #[test]
    fn small_lln_run() {
        let exp = LlnExperiment {
            params: SystemParams::new(500, 50, 0.7).unwrap(),
            init: InitSpec::Empty,
            t_end: 1.0,
            grid_dt: 0.1,
            replicates: 8,
            seed: 3,
            coords: 5,
            fluid_dt: 1e-3,
            backend: Backend::Occupancy,
        };
        let (block, mart) = run_lln_experiment(&exp).unwrap();
        assert_eq!(block.sup_l1_per_replicate.len(), 8);
        assert!(block.median <= block.p90);
        assert!(block.p90 < 0.5, "{}", block.p90);
        assert!(!mart.violation, "{mart:?}");
    }

    #[test]
    fn configured_lln_roundtrip() {
        let text = "\
[system]
n = 500
d = 50
lambda = 0.7

[prelimit]
init = empty
t_end = 1
grid_dt = 0.1
replicates = 6
seed = 3
coords = 5

[limit]
dt = 1e-3

[comparison]
mode = lln
lln_p90_max = 0.5
";
        let report = run_configured(text).unwrap();
        assert_eq!(report.mode, "lln");
        assert!(report.passed);
    }

    #[test]
    fn config_validation_errors() {
        assert!(experiment_from_config("[system]\nn = 10\n").is_err()); // missing d
        let bad_mode = "[system]\nn = 10\nd = 2\nlambda = 0.5\n[comparison]\nmode = bogus\n";
        assert!(experiment_from_config(bad_mode).is_err());
        // comparison time off the grid
        let off_grid = "\
[system]
n = 100
d = 10
lambda = 0.9
[prelimit]
grid_dt = 0.3
[limit]
regime = critical
[comparison]
times = 0.5
";
        match experiment_from_config(off_grid).unwrap() {
            ConfiguredExperiment::Fluctuation(exp) => {
                assert!(run_fluctuation_experiment(&exp).is_err());
            }
            other => panic!("{other:?}"),
        }
    }
}
