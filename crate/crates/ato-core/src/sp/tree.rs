//! Scenario trees and the monolithic stage LP.

use alloc::vec;
use alloc::vec::Vec;

use super::{round_even, Backend, SpError, SpModel, SpOptions, SpSolution, Truncation};
use crate::demand::{DemandModel, WindowPmf};
use crate::lp::{solve_with, Bound, LpOptions, LpProblem, LpStatus, Perturber, Sense};
use crate::model::AtoSystem;

/// Stagewise truncated demand supports; stage `k` (1-based) is `stages[k-1]`.
///
/// Paths are indexed in mixed radix with the latest-revealed stage (the
/// highest `k`) most significant, so the node of stage `k'` above leaf `l`
/// is `l / prod_{s <= k'} |supp_s|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    pub stages: Vec<WindowPmf>,
}

impl ScenarioTree {
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn support(&self, k: usize) -> usize {
        self.stages[k - 1].len()
    }

    /// `|Omega_k^{k'}|`: paths through stages `k'+1..=k`.
    pub fn path_count(&self, k: usize, kp: usize) -> usize {
        (kp + 1..=k).map(|l| self.support(l)).product()
    }

    pub fn leaf_count(&self, k: usize) -> usize {
        self.path_count(k, 0)
    }

    /// Leaf count as a float, safe against overflow.
    pub fn projected_leaves(&self, k: usize) -> f64 {
        (1..=k).map(|l| self.support(l) as f64).product()
    }

    /// Atom index of stage `l` on path `idx` of `Omega_k^{kp}`.
    pub fn digit(&self, kp: usize, idx: usize, l: usize) -> usize {
        let below: usize = (kp + 1..l).map(|s| self.support(s)).product();
        (idx / below) % self.support(l)
    }

    pub fn path_probability(&self, k: usize, kp: usize, idx: usize) -> f64 {
        (kp + 1..=k).map(|l| self.stages[l - 1].prob(self.digit(kp, idx, l))).product()
    }

    /// Summed demand along path `idx` of `Omega_k^{kp}`.
    pub fn path_demand(&self, k: usize, kp: usize, idx: usize) -> Vec<i64> {
        let m = self.stages[0].products();
        let mut d = vec![0i64; m];
        for l in kp + 1..=k {
            for (acc, v) in d.iter_mut().zip(self.stages[l - 1].atom(self.digit(kp, idx, l))) {
                *acc += v;
            }
        }
        d
    }
}

pub fn build_scenario_tree(
    system: &AtoSystem,
    demand: &DemandModel,
    truncation: &Truncation,
    leaf_budget: f64,
) -> Result<ScenarioTree, SpError> {
    let model = SpModel::new(system, demand, truncation)?;
    let leaves = model.tree.projected_leaves(model.stages());
    if leaves > leaf_budget {
        return Err(SpError::LeafBudget { leaves, budget: leaf_budget });
    }
    Ok(model.tree)
}

/// LP for `phi^k` over the stage-`k` subtree. Columns: `y^{k'}` blocks for
/// `k' = k, k-1, ..., 1` (one copy per node of `Omega_k^{k'}`), then `z` per leaf.
pub fn build_stage_lp(model: &SpModel, k: usize, upstream: &[i64], x: &[i64]) -> Result<LpProblem, SpError> {
    if k == 0 || k > model.stages() {
        return Err(SpError::Dimension("stage index out of range"));
    }
    if upstream.len() != model.n - model.class_start[k] || x.len() != model.m {
        return Err(SpError::Dimension("stage LP inputs"));
    }
    let tree = &model.tree;
    let m = model.m;
    let leaves = tree.leaf_count(k);
    let mut offsets = vec![0usize; k + 1];
    let mut cols = 0usize;
    for kp in (1..=k).rev() {
        offsets[kp] = cols;
        cols += model.stage_range(kp).len() * tree.path_count(k, kp);
    }
    let z0 = cols;
    cols += m * leaves;
    let mut lp = LpProblem::new(cols);
    for kp in (1..=k).rev() {
        let range = model.stage_range(kp);
        let nk = range.len();
        for node in 0..tree.path_count(k, kp) {
            let p = tree.path_probability(k, kp, node);
            for (jj, j) in range.clone().enumerate() {
                let col = offsets[kp] + node * nk + jj;
                lp.cost[col] = p * model.h[j];
                lp.bounds[col] = Bound::Free;
            }
        }
    }
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(m + 1);
    for leaf in 0..leaves {
        let p = tree.path_probability(k, 0, leaf);
        let d = tree.path_demand(k, 0, leaf);
        for i in 0..m {
            let col = z0 + leaf * m + i;
            lp.cost[col] = -p * model.c[i];
            lp.bounds[col] = Bound::Upper((x[i] + d[i]) as f64);
        }
        let mut below = 1usize;
        for kp in 1..=k {
            below *= tree.support(kp);
            let node = leaf / below;
            let range = model.stage_range(kp);
            let nk = range.len();
            for (jj, j) in range.enumerate() {
                row.clear();
                for i in 0..m {
                    let a = model.bom[j * m + i];
                    if a != 0 {
                        row.push((z0 + leaf * m + i, a as f64));
                    }
                }
                row.push((offsets[kp] + node * nk + jj, -1.0));
                lp.add_row(&row, Sense::Le, 0.0);
            }
        }
        for j in model.class_start[k]..model.n {
            row.clear();
            for i in 0..m {
                let a = model.bom[j * m + i];
                if a != 0 {
                    row.push((z0 + leaf * m + i, a as f64));
                }
            }
            lp.add_row(&row, Sense::Le, upstream[j - model.class_start[k]] as f64);
        }
    }
    Ok(lp)
}

fn perturbed_model(model: &SpModel, epsilon: f64) -> SpModel {
    let mut out = model.clone();
    let total = model.n + model.m + model.tree.stages.iter().map(|s| s.len()).sum::<usize>();
    let mut pert = Perturber::new(epsilon, total);
    pert.perturb(&mut out.h);
    pert.perturb(&mut out.c);
    for stage in out.tree.stages.iter_mut() {
        pert.perturb_probabilities(stage.probs_mut());
    }
    out
}

pub(crate) fn solve_tree_lp(
    model: &SpModel,
    k: usize,
    upstream: &[i64],
    x: &[i64],
    options: &SpOptions,
) -> Result<SpSolution, SpError> {
    Ok(solve_tree_lp_with_terms(model, k, upstream, x, options)?.0)
}

/// Solves the perturbed stage LP and reports, at its optimum, the
/// unperturbed objective plus `sum P h.y` and `c . E[x + D - z]`.
pub(crate) fn solve_tree_lp_with_terms(
    model: &SpModel,
    k: usize,
    upstream: &[i64],
    x: &[i64],
    options: &SpOptions,
) -> Result<(SpSolution, f64, f64), SpError> {
    let leaves = model.tree.projected_leaves(k);
    if leaves > options.leaf_budget {
        return Err(SpError::LeafBudget { leaves, budget: options.leaf_budget });
    }
    let plain = build_stage_lp(model, k, upstream, x)?;
    let lp = if options.epsilon > 0.0 {
        build_stage_lp(&perturbed_model(model, options.epsilon), k, upstream, x)?
    } else {
        plain.clone()
    };
    let lp_opts = if options.epsilon > 0.0 { LpOptions::perturbed() } else { LpOptions::default() };
    let sol = solve_with(&lp, &lp_opts)?;
    if sol.status != LpStatus::Optimal {
        return Err(SpError::LpStatus(sol.status));
    }
    let objective = plain.objective_at(&sol.x);
    let nk = model.stage_range(k).len();
    let y: Vec<f64> = sol.x[..nk].to_vec();
    let z0 = plain.ncols() - model.m * model.tree.leaf_count(k);
    let mut holding = 0.0;
    for c in 0..z0 {
        holding += plain.cost[c] * sol.x[c];
    }
    let mut backlog = 0.0;
    for leaf in 0..model.tree.leaf_count(k) {
        let p = model.tree.path_probability(k, 0, leaf);
        let d = model.tree.path_demand(k, 0, leaf);
        for i in 0..model.m {
            backlog += p * model.c[i] * ((x[i] + d[i]) as f64 - sol.x[z0 + leaf * model.m + i]);
        }
    }
    let solution = SpSolution {
        stage: k,
        y_int: y.iter().map(|&v| round_even(v)).collect(),
        y,
        objective,
        backend: Backend::TreeLp,
        box_widenings: 0,
    };
    Ok((solution, holding, backlog))
}
