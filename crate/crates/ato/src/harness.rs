//! Experiment orchestration: lower bounds, replications, gaps and CSV output.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ato_core::model::AtoSystem;
use ato_core::policy::{Policy, PolicyConfig};
use ato_core::sim::{self, ReplicationResult, SimError, SimOptions};
use ato_core::sp::{LowerBound, SpSolver};
use ato_core::tracking::{run_tracking, TrackingSpec};
use rayon::prelude::*;

use crate::config::{Case, ConfigError, ExperimentConfig, TrackingConfig};
use crate::stats::{estimate_long_run_cost, t_quantile, StatsError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("case {case}: solver failure: {message}")]
    Solver { case: String, message: String },
    #[error("case {case}: audit failure: {message}")]
    Audit { case: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("tracking: {0}")]
    Tracking(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed csv: {0}")]
    Malformed(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// 2 for configuration errors, 3 for solver failures, 4 for audit failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Options(_) => 2,
            HarnessError::Solver { .. } | HarnessError::Stats(_) | HarnessError::Tracking(_) => 3,
            HarnessError::Audit { .. } => 4,
            _ => 1,
        }
    }
}

/// Formats with 6 significant digits in fixed notation.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    let rounded: f64 = s.parse().unwrap_or(x);
    let mag2 = rounded.abs().log10().floor() as i32;
    if mag2 != mag && rounded != 0.0 {
        let decimals = (5 - mag2).max(0) as usize;
        return format!("{rounded:.decimals$}");
    }
    s
}

/// `x` as it reads back from its 6-significant-digit text.
pub fn sig6(x: f64) -> f64 {
    fmt6(x).parse().unwrap_or(x)
}

fn secs(x: f64) -> f64 {
    format!("{x:.3}").parse().unwrap_or(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub case: String,
    pub orientation: String,
    /// One lead time per class.
    pub lead_times: Vec<f64>,
    /// `None` for every numeric field marks a failed case.
    pub result: Option<CaseResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub lower_bound: f64,
    pub sim_mean: f64,
    pub ci95: (f64, f64),
    pub ci999: (f64, f64),
    pub gap: f64,
    pub bound_in_ci95: bool,
    pub bound_in_ci999: bool,
    pub sp_seconds: f64,
    pub sim_seconds: f64,
}

/// `(mean - bound) / bound`, defined as 0 when both are 0.
pub fn optimality_gap(bound: f64, mean: f64) -> f64 {
    if bound == 0.0 && mean == 0.0 {
        0.0
    } else {
        (mean - bound) / bound
    }
}

pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    /// Set when a case failed; its row is the last one and carries no numbers.
    pub error: Option<HarnessError>,
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| HarnessError::Pool(e.to_string()))
}

fn sim_options(config: &ExperimentConfig, system: &AtoSystem) -> SimOptions {
    let mut o = SimOptions::for_system(system);
    if let Some(h) = config.sim.horizon {
        o.horizon = h;
    }
    o.warmup_fraction = config.sim.warmup_fraction;
    o.audit_every = config.sim.audit_every;
    o
}

fn sim_error(case: &str, e: SimError) -> HarnessError {
    match e {
        SimError::Audit(_) => HarnessError::Audit { case: case.to_string(), message: e.to_string() },
        SimError::Options(m) => HarnessError::Options(m.to_string()),
        SimError::Policy(_) => HarnessError::Solver { case: case.to_string(), message: e.to_string() },
    }
}

fn solver_error(case: &str, e: impl ToString) -> HarnessError {
    HarnessError::Solver { case: case.to_string(), message: e.to_string() }
}

/// Lower bound of one case plus the solver (memo included) that produced it.
pub fn case_lower_bound(config: &ExperimentConfig, case: &Case) -> Result<(LowerBound, SpSolver, f64), HarnessError> {
    let start = Instant::now();
    let mut solver = SpSolver::from_system(&case.system, &config.demand, config.sp).map_err(|e| solver_error(&case.label, e))?;
    let lb = solver.lower_bound().map_err(|e| solver_error(&case.label, e))?;
    Ok((lb, solver, start.elapsed().as_secs_f64()))
}

/// Runs the configured replications of one case in parallel on `pool`.
pub fn replicate(
    config: &ExperimentConfig,
    case: &Case,
    policy: &Policy,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ReplicationResult>, HarnessError> {
    let opts = sim_options(config, &case.system);
    let seed = config.sim.seed;
    let results: Vec<Result<ReplicationResult, SimError>> = pool.install(|| {
        (0..config.sim.replications)
            .into_par_iter()
            .map(|r| sim::run(&case.system, &config.demand, policy, &opts, seed, r))
            .collect()
    });
    results.into_iter().map(|r| r.map_err(|e| sim_error(&case.label, e))).collect()
}

fn policy_for(config: &ExperimentConfig, case: &Case, solver: SpSolver) -> Policy {
    let pc = PolicyConfig { sp: config.sp, ..PolicyConfig::default() };
    Policy::from_solver(&case.system, solver, &pc)
}

fn run_case(config: &ExperimentConfig, case: &Case, pool: &rayon::ThreadPool) -> Result<CaseResult, HarnessError> {
    let (lb, solver, sp_seconds) = case_lower_bound(config, case)?;
    let policy = policy_for(config, case, solver);
    let start = Instant::now();
    let reps = replicate(config, case, &policy, pool)?;
    let sim_seconds = start.elapsed().as_secs_f64();
    let costs: Vec<f64> = reps.iter().map(|r| r.avg_cost).collect();
    let est = estimate_long_run_cost(&costs)?;
    let lower_bound = sig6(lb.value);
    let sim_mean = sig6(est.mean);
    let ci95 = (sig6(est.ci95.0), sig6(est.ci95.1));
    let ci999 = (sig6(est.ci999.0), sig6(est.ci999.1));
    let timed = config.sim.record_timings;
    Ok(CaseResult {
        lower_bound,
        sim_mean,
        ci95,
        ci999,
        gap: sig6(optimality_gap(lower_bound, sim_mean)),
        bound_in_ci95: ci95.0 <= lower_bound && lower_bound <= ci95.1,
        bound_in_ci999: ci999.0 <= lower_bound && lower_bound <= ci999.1,
        sp_seconds: if timed { secs(sp_seconds) } else { 0.0 },
        sim_seconds: if timed { secs(sim_seconds) } else { 0.0 },
    })
}

/// Bound, replications and gap for every case, in case order. Stops at the
/// first failing case and appends its failure row.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> ExperimentReport {
    let pool = match thread_pool(threads) {
        Ok(p) => p,
        Err(e) => return ExperimentReport { rows: Vec::new(), error: Some(e) },
    };
    let mut rows = Vec::with_capacity(config.cases.len());
    for case in &config.cases {
        let result = run_case(config, case, &pool);
        let failed = result.as_ref().err().map(|_| ());
        let row = ExperimentRow {
            case: case.label.clone(),
            orientation: case.orientation.clone(),
            lead_times: case.system.lead_times().to_vec(),
            result: result.as_ref().ok().cloned(),
        };
        rows.push(row);
        if failed.is_some() {
            return ExperimentReport { rows, error: result.err() };
        }
    }
    ExperimentReport { rows, error: None }
}

fn class_columns(rows: &[ExperimentRow]) -> usize {
    rows.iter().map(|r| r.lead_times.len()).max().unwrap_or(0)
}

pub fn write_experiment_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<(), HarnessError> {
    let k = class_columns(rows);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case".to_string(), "orientation".to_string()];
    header.extend((1..=k).map(|i| format!("L{i}")));
    for h in [
        "lower_bound",
        "sim_mean",
        "ci95_lo",
        "ci95_hi",
        "ci999_lo",
        "ci999_hi",
        "gap",
        "bound_in_ci95",
        "bound_in_ci999",
        "sp_seconds",
        "sim_seconds",
    ] {
        header.push(h.to_string());
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.case.clone(), row.orientation.clone()];
        rec.extend((0..k).map(|i| row.lead_times.get(i).map(|l| format!("{l}")).unwrap_or_default()));
        match &row.result {
            Some(r) => {
                for v in [r.lower_bound, r.sim_mean, r.ci95.0, r.ci95.1, r.ci999.0, r.ci999.1, r.gap] {
                    rec.push(fmt6(v));
                }
                rec.push(r.bound_in_ci95.to_string());
                rec.push(r.bound_in_ci999.to_string());
                rec.push(format!("{:.3}", r.sp_seconds));
                rec.push(format!("{:.3}", r.sim_seconds));
            }
            None => {
                rec.extend((0..6).map(|_| String::new()));
                rec.push("FAILED".to_string());
                rec.extend((0..4).map(|_| String::new()));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64, HarnessError> {
    s.parse().map_err(|_| HarnessError::Malformed(format!("not a number: `{s}`")))
}

fn parse_bool(s: &str) -> Result<bool, HarnessError> {
    s.parse().map_err(|_| HarnessError::Malformed(format!("not a boolean: `{s}`")))
}

pub fn read_experiment_csv<R: Read>(input: R) -> Result<Vec<ExperimentRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let k = header.iter().filter(|h| h.starts_with('L') && h[1..].parse::<usize>().is_ok()).count();
    if header.len() != 2 + k + 11 {
        return Err(HarnessError::Malformed(format!("unexpected header with {} columns", header.len())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let lead_times = (0..k).map(|i| &rec[2 + i]).filter(|s| !s.is_empty()).map(parse_f64).collect::<Result<Vec<_>, _>>()?;
        let f = |i: usize| parse_f64(&rec[2 + k + i]);
        let result = if &rec[2 + k + 6] == "FAILED" {
            None
        } else {
            Some(CaseResult {
                lower_bound: f(0)?,
                sim_mean: f(1)?,
                ci95: (f(2)?, f(3)?),
                ci999: (f(4)?, f(5)?),
                gap: f(6)?,
                bound_in_ci95: parse_bool(&rec[2 + k + 7])?,
                bound_in_ci999: parse_bool(&rec[2 + k + 8])?,
                sp_seconds: f(9)?,
                sim_seconds: f(10)?,
            })
        };
        rows.push(ExperimentRow { case: rec[0].to_string(), orientation: rec[1].to_string(), lead_times, result });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub case: String,
    pub orientation: String,
    pub lead_times: Vec<f64>,
    pub bound: LowerBound,
    pub sp_seconds: f64,
}

/// Lower bounds only, cases solved in parallel and reported in case order.
pub fn lower_bounds(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<BoundRow>, HarnessError> {
    let pool = thread_pool(threads)?;
    let out: Vec<Result<BoundRow, HarnessError>> = pool.install(|| {
        config
            .cases
            .par_iter()
            .map(|case| {
                let (bound, _, secs) = case_lower_bound(config, case)?;
                Ok(BoundRow {
                    case: case.label.clone(),
                    orientation: case.orientation.clone(),
                    lead_times: case.system.lead_times().to_vec(),
                    bound,
                    sp_seconds: secs,
                })
            })
            .collect()
    });
    out.into_iter().collect()
}

pub fn write_bounds_csv<W: Write>(rows: &[BoundRow], timings: bool, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "orientation", "lead_times", "lower_bound", "phi_top", "holding_term", "backlog_term", "correction", "sp_seconds"])?;
    for r in rows {
        let leads: Vec<String> = r.lead_times.iter().map(|l| format!("{l}")).collect();
        let b = &r.bound;
        w.write_record([
            r.case.clone(),
            r.orientation.clone(),
            leads.join(" "),
            fmt6(b.value),
            fmt6(b.phi_top),
            fmt6(b.holding_term),
            fmt6(b.backlog_term),
            fmt6(b.correction),
            format!("{:.3}", if timings { r.sp_seconds } else { 0.0 }),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRow {
    pub case: String,
    pub replication: u64,
    pub seed: u64,
    pub avg_cost: f64,
    pub holding: f64,
    pub backlog: f64,
    pub events: u64,
}

/// Replications of every case without the gap summary.
pub fn simulate(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<SimRow>, HarnessError> {
    let pool = thread_pool(threads)?;
    let mut rows = Vec::new();
    for case in &config.cases {
        let solver = SpSolver::from_system(&case.system, &config.demand, config.sp).map_err(|e| solver_error(&case.label, e))?;
        let policy = policy_for(config, case, solver);
        for r in replicate(config, case, &policy, &pool)? {
            rows.push(SimRow {
                case: case.label.clone(),
                replication: r.stream,
                seed: r.seed,
                avg_cost: r.avg_cost,
                holding: r.holding_cost,
                backlog: r.backlog_cost,
                events: r.events,
            });
        }
    }
    Ok(rows)
}

pub fn write_sim_csv<W: Write>(rows: &[SimRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "replication", "seed", "avg_cost", "holding", "backlog", "events"])?;
    for r in rows {
        w.write_record([
            r.case.clone(),
            r.replication.to_string(),
            r.seed.to_string(),
            fmt6(r.avg_cost),
            fmt6(r.holding),
            fmt6(r.backlog),
            r.events.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lead_time: f64,
    pub mean_sup_gap: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replications: u64,
}

/// Mean scaled sup-gap per lead time with a 95% Student-t interval.
pub fn convergence_sweep(
    spec: &TrackingSpec,
    grid: &[f64],
    reps: u64,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<SweepRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Options("tracking grid is empty".into()));
    }
    if reps == 0 {
        return Err(HarnessError::Options("tracking needs at least one replication".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (g, &l) in grid.iter().enumerate() {
        // Streams are disjoint across grid points.
        let base = g as u64 * reps;
        let gaps: Vec<Result<f64, _>> =
            pool.install(|| (0..reps).into_par_iter().map(|r| run_tracking(spec, l, None, seed, base + r).map(|t| t.sup_gap)).collect());
        let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_, _>>().map_err(|e| HarnessError::Tracking(e.to_string()))?;
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let half = if gaps.len() > 1 {
            let var = gaps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            t_quantile(0.95, n - 1.0) * (var / n).sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow { lead_time: l, mean_sup_gap: mean, ci_low: mean - half, ci_high: mean + half, replications: reps });
    }
    Ok(rows)
}

pub fn run_tracking_experiment(config: &TrackingConfig, threads: Option<usize>) -> Result<Vec<SweepRow>, HarnessError> {
    let pool = thread_pool(threads)?;
    convergence_sweep(&config.spec, &config.lead_times, config.replications, config.seed, &pool)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["L", "mean_sup_gap", "ci_low", "ci_high", "reps"])?;
    for r in rows {
        w.write_record([format!("{}", r.lead_time), fmt6(r.mean_sup_gap), fmt6(r.ci_low), fmt6(r.ci_high), r.replications.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to `path`, or to standard output when `path` is `None`.
pub fn with_output<F>(path: Option<&Path>, f: F) -> Result<(), HarnessError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), HarnessError>,
{
    match path {
        Some(p) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(p)?);
            f(&mut file)?;
            file.flush()?;
            Ok(())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(21.37054), "21.3705");
        assert_eq!(fmt6(0.00123456789), "0.00123457");
        assert_eq!(fmt6(1234567.0), "1234567");
        assert_eq!(fmt6(9.9999996), "10.0000");
        assert_eq!(fmt6(-0.5), "-0.500000");
        assert_eq!(fmt6(0.0), "0");
    }

    #[test]
    fn gap_is_zero_for_zero_bound_and_cost() {
        assert_eq!(optimality_gap(0.0, 0.0), 0.0);
        assert!((optimality_gap(21.38, 21.56) - 0.0084191).abs() < 1e-6);
    }
}
