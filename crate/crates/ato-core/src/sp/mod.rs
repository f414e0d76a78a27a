//! The multi-stage stochastic program behind the lower bound and the
//! replenishment targets.
//!
//! Stage `k` (1-based, matching lead-time class `k`) chooses `y^k` before the
//! demand `D^k` over `L_k - L_{k-1}` is revealed:
//!
//! `phi^k(y^{k+1..K}, x) = min_{y^k} h^k . y^k + E phi^{k-1}(y^{k..K}, x + D^k)`
//!
//! with `phi^0(Y, x) = -max { c . z : z <= x, A z <= Y }`.

mod nested;
mod tree;
mod vertices;

pub use nested::NestedSolver;
pub use tree::{build_scenario_tree, build_stage_lp, ScenarioTree};
pub use vertices::{dual_vertices, DualVertices};

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::demand::{default_truncation, moments, sample_path, window_distribution, DemandModel, WindowPmf};
use crate::lp::{LpError, LpStatus};
use crate::model::{effective_unit_cost, AtoSystem};

#[derive(Clone, Debug, PartialEq)]
pub enum SpError {
    LeafBudget { leaves: f64, budget: f64 },
    NonConvergent,
    Lp(LpError),
    LpStatus(LpStatus),
    Dimension(&'static str),
    DecompositionMismatch { bound: f64, decomposition: f64 },
}

impl fmt::Display for SpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpError::LeafBudget { leaves, budget } => write!(
                f,
                "scenario tree would have {leaves:.3e} leaves (budget {budget:.3e}); use the nested backend or SAA mode"
            ),
            SpError::NonConvergent => write!(f, "nested search did not converge"),
            SpError::Lp(e) => write!(f, "{e}"),
            SpError::LpStatus(s) => write!(f, "stage LP ended with status {s:?}"),
            SpError::Dimension(what) => write!(f, "dimension mismatch: {what}"),
            SpError::DecompositionMismatch { bound, decomposition } => {
                write!(f, "lower bound {bound} disagrees with its decomposition {decomposition}")
            }
        }
    }
}

impl From<LpError> for SpError {
    fn from(e: LpError) -> Self {
        SpError::Lp(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    TreeLp,
    Nested,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// `max_i ceil(mean_i + 6 sd_i)` per stage window.
    SixSigma,
    /// The same level for every stage.
    Fixed(i64),
    /// Six-sigma levels scaled by a factor (used for convergence checks).
    Scaled(f64),
    /// Equiprobable sampled atoms per stage.
    Sampled { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpOptions {
    pub backend: Backend,
    pub truncation: Truncation,
    pub memo_capacity: usize,
    pub leaf_budget: f64,
    pub epsilon: f64,
    /// Recompute the bound from its decomposition and require agreement.
    pub check_decomposition: bool,
}

impl Default for SpOptions {
    fn default() -> Self {
        SpOptions {
            backend: Backend::Nested,
            truncation: Truncation::SixSigma,
            memo_capacity: 2_000_000,
            leaf_budget: 1e7,
            epsilon: 1e-9,
            check_decomposition: true,
        }
    }
}

/// Costs, BOM and stage pmfs in the form the solvers consume.
#[derive(Clone, Debug, PartialEq)]
pub struct SpModel {
    pub m: usize,
    pub n: usize,
    /// `n x m` row-major.
    pub bom: Vec<i64>,
    /// Component offsets of each stage, length `K + 1`.
    pub class_start: Vec<usize>,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub tree: ScenarioTree,
    /// Untruncated mean demand over the full lead time `L_K`.
    pub full_mean: Vec<f64>,
    pub sampled: bool,
}

fn stage_pmf(demand: &DemandModel, duration: f64, truncation: &Truncation, stage: usize) -> WindowPmf {
    match *truncation {
        Truncation::SixSigma => window_distribution(demand, duration, default_truncation(demand, duration)),
        Truncation::Fixed(mm) => window_distribution(demand, duration, mm),
        Truncation::Scaled(f) => {
            let mm = libm::ceil(default_truncation(demand, duration) as f64 * f) as i64;
            window_distribution(demand, duration, mm)
        }
        Truncation::Sampled { samples, seed } => sampled_pmf(demand, duration, samples, seed, stage as u64),
    }
}

fn sampled_pmf(demand: &DemandModel, duration: f64, samples: usize, seed: u64, stage: u64) -> WindowPmf {
    let m = demand.products();
    let mut draws: Vec<Vec<i64>> = Vec::with_capacity(samples);
    for s in 0..samples {
        let path = sample_path(demand, 0.0, duration, seed, (stage << 32) | s as u64);
        let mut tot = vec![0i64; m];
        for a in 0..path.len() {
            for (t, v) in tot.iter_mut().zip(path.size(a)) {
                *t += v;
            }
        }
        draws.push(tot);
    }
    draws.sort();
    let mut atoms: Vec<(Vec<i64>, f64)> = Vec::new();
    let w = 1.0 / samples.max(1) as f64;
    for d in draws {
        match atoms.last_mut() {
            Some((last, p)) if *last == d => *p += w,
            _ => atoms.push((d, w)),
        }
    }
    let top = atoms.iter().flat_map(|(d, _)| d.iter().copied()).max().unwrap_or(0);
    WindowPmf::from_atoms(m, duration, top, &atoms)
}

impl SpModel {
    pub fn new(system: &AtoSystem, demand: &DemandModel, truncation: &Truncation) -> Result<SpModel, SpError> {
        if demand.products() != system.products() {
            return Err(SpError::Dimension("demand model and system have different product counts"));
        }
        let k_count = system.classes();
        let mut stages = Vec::with_capacity(k_count);
        let mut prev = 0.0;
        for k in 0..k_count {
            let l = system.lead_time(k);
            stages.push(stage_pmf(demand, l - prev, truncation, k));
            prev = l;
        }
        let class_start = (0..=k_count)
            .map(|k| if k == k_count { system.components() } else { system.class_range(k).start })
            .collect();
        Ok(SpModel {
            m: system.products(),
            n: system.components(),
            bom: system.bom().to_vec(),
            class_start,
            h: system.holding().to_vec(),
            b: system.backlog().to_vec(),
            c: effective_unit_cost(system).c,
            tree: ScenarioTree { stages },
            full_mean: moments(demand, system.lead_time(k_count - 1)).0,
            sampled: matches!(truncation, Truncation::Sampled { .. }),
        })
    }

    /// The identical-lead-time relaxation: only the longest-lead components,
    /// cost `c_I = b + (A^K)' h^K`, one stage over `L_K`.
    pub fn identical_relaxation(system: &AtoSystem, demand: &DemandModel, truncation: &Truncation) -> Result<SpModel, SpError> {
        let k_count = system.classes();
        let range = system.class_range(k_count - 1);
        let m = system.products();
        let n = range.len();
        let mut bom = Vec::with_capacity(n * m);
        for j in range.clone() {
            bom.extend_from_slice(system.bom_row(j));
        }
        let h: Vec<f64> = system.holding()[range.clone()].to_vec();
        let c = (0..m)
            .map(|i| system.backlog()[i] + (0..n).map(|j| bom[j * m + i] as f64 * h[j]).sum::<f64>())
            .collect();
        let lk = system.lead_time(k_count - 1);
        Ok(SpModel {
            m,
            n,
            bom,
            class_start: vec![0, n],
            h,
            b: system.backlog().to_vec(),
            c,
            tree: ScenarioTree { stages: vec![stage_pmf(demand, lk, truncation, 0)] },
            full_mean: moments(demand, lk).0,
            sampled: matches!(truncation, Truncation::Sampled { .. }),
        })
    }

    pub fn stages(&self) -> usize {
        self.class_start.len() - 1
    }

    /// Components of stage `k` (1-based).
    pub fn stage_range(&self, k: usize) -> core::ops::Range<usize> {
        self.class_start[k - 1]..self.class_start[k]
    }

    pub fn row_dot(&self, j: usize, v: &[i64]) -> i64 {
        self.bom[j * self.m..(j + 1) * self.m].iter().zip(v).map(|(a, x)| a * x).sum()
    }

    /// `b . E[D-bar]` with the untruncated mean.
    pub fn backlog_mean(&self) -> f64 {
        self.b.iter().zip(&self.full_mean).map(|(b, d)| b * d).sum()
    }

    /// `c . (E[D-bar] - E[D-bar_M])`: the part of `c . E[B*]` carried by
    /// demand beyond the truncation levels.
    pub fn truncation_excess(&self) -> f64 {
        let mut truncated = vec![0.0; self.m];
        for stage in &self.tree.stages {
            for (acc, v) in truncated.iter_mut().zip(stage.mean()) {
                *acc += v;
            }
        }
        (0..self.m).map(|i| self.c[i] * (self.full_mean[i] - truncated[i])).sum()
    }

    /// `sum_k [(A^k)' h^k] . E[D-bar]`.
    pub fn holding_correction(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let ah: f64 = (0..self.n).map(|j| self.bom[j * self.m + i] as f64 * self.h[j]).sum();
                ah * self.full_mean[i]
            })
            .sum()
    }

    /// Integer search box for `y^k` from the solution-bound constants.
    pub fn solution_box(&self, k: usize, upstream: &[i64], x: &[i64]) -> SolutionBox {
        let a_min = self.bom.iter().copied().filter(|&a| a > 0).min().unwrap_or(1) as f64;
        let a_max = self.bom.iter().copied().max().unwrap_or(1).max(1) as f64;
        let h_min = self.h.iter().copied().fold(f64::INFINITY, f64::min);
        let b_min = self.b.iter().copied().fold(f64::INFINITY, f64::min);
        let kappa = self.c.iter().copied().fold(0.0, f64::max) / a_min;
        let beta_upper = a_max * kappa / h_min;
        let beta_lower = (a_max / b_min) * kappa * (self.n as f64 * a_max).max(1.0);
        let x_norm: i64 = x.iter().map(|v| v.abs()).sum();
        let mean_norm: f64 = (0..k).map(|s| self.tree.stages[s].mean().iter().sum::<f64>()).sum();
        let up_norm: i64 = upstream.iter().map(|v| v.abs()).sum();
        let upper = beta_upper * (x_norm as f64 + mean_norm + 1.0);
        let lower = -beta_lower * (x_norm as f64 + mean_norm + up_norm as f64);
        SolutionBox {
            upper_edge: upper,
            lower_edge: lower,
            lo: libm::floor(lower) as i64 - 1,
            hi: libm::ceil(upper) as i64 + 1,
        }
    }
}

/// Per-component search range for a stage decision (the same for every component).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolutionBox {
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub lo: i64,
    pub hi: i64,
}

pub fn solution_box(model: &SpModel, k: usize, upstream: &[i64], x: &[i64]) -> SolutionBox {
    model.solution_box(k, upstream, x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpSolution {
    pub stage: usize,
    pub y: Vec<f64>,
    pub y_int: Vec<i64>,
    pub objective: f64,
    pub backend: Backend,
    pub box_widenings: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBound {
    pub value: f64,
    pub phi_top: f64,
    /// `sum_k h^k . E[y^{k*}]`.
    pub holding_term: f64,
    /// `c . E[B*]`.
    pub backlog_term: f64,
    /// `-sum_k [(A^k)' h^k] . E[D-bar]`.
    pub correction: f64,
    /// `holding_term + backlog_term + correction`.
    pub decomposition: f64,
    pub y_top: Vec<i64>,
    pub backend: Backend,
    pub sampled: bool,
}

/// Nearest integer, ties to even.
pub fn round_even(v: f64) -> i64 {
    libm::rint(v) as i64
}

/// A stage solver over one model with either backend.
#[derive(Clone, Debug)]
pub struct SpSolver {
    model: Arc<SpModel>,
    options: SpOptions,
    nested: NestedSolver,
}

impl SpSolver {
    pub fn new(model: SpModel, options: SpOptions) -> SpSolver {
        let model = Arc::new(model);
        let nested = NestedSolver::new(model.clone(), options.memo_capacity);
        SpSolver { model, options, nested }
    }

    pub fn from_system(system: &AtoSystem, demand: &DemandModel, options: SpOptions) -> Result<SpSolver, SpError> {
        Ok(SpSolver::new(SpModel::new(system, demand, &options.truncation)?, options))
    }

    pub fn model(&self) -> &SpModel {
        &self.model
    }

    pub fn options(&self) -> &SpOptions {
        &self.options
    }

    pub fn nested(&mut self) -> &mut NestedSolver {
        &mut self.nested
    }

    /// Solves `phi^k` for given upstream decisions `y^{k+1..K}` (concatenated)
    /// and window demand `x`.
    pub fn solve_stage(&mut self, k: usize, upstream: &[i64], x: &[i64]) -> Result<SpSolution, SpError> {
        self.check_stage_args(k, upstream, x)?;
        match self.options.backend {
            Backend::Nested => self.nested.solve(k, upstream, x),
            Backend::TreeLp => tree::solve_tree_lp(&self.model, k, upstream, x, &self.options),
        }
    }

    /// Memoized nested-search decision `y^{k*}` (always the nested backend).
    pub fn decision(&mut self, k: usize, upstream: &[i64], x: &[i64]) -> Result<Vec<i64>, SpError> {
        Ok(self.nested.phi(k, upstream, x)?.0)
    }

    fn check_stage_args(&self, k: usize, upstream: &[i64], x: &[i64]) -> Result<(), SpError> {
        let kk = self.model.stages();
        if k == 0 || k > kk {
            return Err(SpError::Dimension("stage index out of range"));
        }
        if upstream.len() != self.model.n - self.model.class_start[k] {
            return Err(SpError::Dimension("upstream decisions"));
        }
        if x.len() != self.model.m {
            return Err(SpError::Dimension("window demand"));
        }
        Ok(())
    }

    pub fn lower_bound(&mut self) -> Result<LowerBound, SpError> {
        let kk = self.model.stages();
        let zero = vec![0i64; self.model.m];
        let (y_top, phi_top, holding, backlog) = match self.options.backend {
            Backend::Nested => {
                let sol = self.nested.solve(kk, &[], &zero)?;
                if self.options.check_decomposition {
                    let (h, b) = self.nested.decomposition(&sol.y_int)?;
                    (sol.y_int, sol.objective, h, b)
                } else {
                    (sol.y_int, sol.objective, f64::NAN, f64::NAN)
                }
            }
            Backend::TreeLp => {
                let (sol, h, b) = tree::solve_tree_lp_with_terms(&self.model, kk, &[], &zero, &self.options)?;
                (sol.y_int, sol.objective, h, b)
            }
        };
        let value = phi_top + self.model.backlog_mean();
        let backlog = backlog + self.model.truncation_excess();
        let correction = -self.model.holding_correction();
        let decomposition = holding + backlog + correction;
        if self.options.check_decomposition {
            let scale = 1.0f64.max(libm::fabs(value));
            if !(libm::fabs(decomposition - value) <= 1e-6 * scale) {
                return Err(SpError::DecompositionMismatch { bound: value, decomposition });
            }
        }
        Ok(LowerBound {
            value,
            phi_top,
            holding_term: holding,
            backlog_term: backlog,
            correction,
            decomposition,
            y_top,
            backend: self.options.backend,
            sampled: self.model.sampled,
        })
    }
}

pub fn lower_bound(system: &AtoSystem, demand: &DemandModel, options: &SpOptions) -> Result<LowerBound, SpError> {
    SpSolver::from_system(system, demand, *options)?.lower_bound()
}

/// Bound from the identical-lead-time relaxation, `phi_I + b . E[D-bar]`.
pub fn two_stage_identical_bound(system: &AtoSystem, demand: &DemandModel, options: &SpOptions) -> Result<f64, SpError> {
    let model = SpModel::identical_relaxation(system, demand, &options.truncation)?;
    let extra = model.backlog_mean();
    let mut solver = NestedSolver::new(Arc::new(model), options.memo_capacity);
    let zero = vec![0i64; system.products()];
    Ok(solver.solve(1, &[], &zero)?.objective + extra)
}
