//! Dense bounded simplex with a deterministic pivot rule, plus the prime-root
//! cost perturbation used to make optima unique.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    Free,
    Lower(f64),
    Upper(f64),
    Box(f64, f64),
}

/// `min cost . x` subject to sparse rows and per-variable bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub bounds: Vec<Bound>,
    /// `(row, column, value)` triplets.
    pub entries: Vec<(usize, usize, f64)>,
    pub senses: Vec<Sense>,
    pub rhs: Vec<f64>,
}

impl LpProblem {
    /// `ncols` variables, zero cost, bounded below by zero.
    pub fn new(ncols: usize) -> LpProblem {
        LpProblem {
            cost: vec![0.0; ncols],
            bounds: vec![Bound::Lower(0.0); ncols],
            entries: Vec::new(),
            senses: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn ncols(&self) -> usize {
        self.cost.len()
    }

    pub fn nrows(&self) -> usize {
        self.rhs.len()
    }

    pub fn add_row(&mut self, coeffs: &[(usize, f64)], sense: Sense, rhs: f64) -> usize {
        let r = self.rhs.len();
        for &(c, v) in coeffs {
            if v != 0.0 {
                self.entries.push((r, c, v));
            }
        }
        self.senses.push(sense);
        self.rhs.push(rhs);
        r
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut lhs = vec![0.0; self.nrows()];
        for &(r, c, v) in &self.entries {
            lhs[r] += v * x[c];
        }
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows() {
            let d = lhs[r] - self.rhs[r];
            let viol = match self.senses[r] {
                Sense::Le => d.max(0.0),
                Sense::Ge => (-d).max(0.0),
                Sense::Eq => d.abs(),
            };
            worst = worst.max(viol);
        }
        for (c, b) in self.bounds.iter().enumerate() {
            let v = x[c];
            let viol = match *b {
                Bound::Free => 0.0,
                Bound::Lower(l) => (l - v).max(0.0),
                Bound::Upper(u) => (v - u).max(0.0),
                Bound::Box(l, u) => (l - v).max(v - u).max(0.0),
            };
            worst = worst.max(viol);
        }
        worst
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.ncols();
        if self.bounds.len() != n {
            return Err(LpError::Malformed("bounds length differs from cost length"));
        }
        if self.senses.len() != self.rhs.len() {
            return Err(LpError::Malformed("senses length differs from rhs length"));
        }
        for &(r, c, v) in &self.entries {
            if r >= self.nrows() || c >= n {
                return Err(LpError::Malformed("entry index out of range"));
            }
            if !v.is_finite() {
                return Err(LpError::Malformed("non-finite coefficient"));
            }
        }
        if self.cost.iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite cost or rhs"));
        }
        for b in &self.bounds {
            let ok = match *b {
                Bound::Free => true,
                Bound::Lower(l) | Bound::Upper(l) => l.is_finite(),
                Bound::Box(l, u) => l.is_finite() && u.is_finite() && l <= u,
            };
            if !ok {
                return Err(LpError::Malformed("invalid bound"));
            }
        }
        Ok(())
    }

    /// Text dump in CPLEX LP layout.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let term = |out: &mut String, first: bool, v: f64, c: usize| {
            let sign = if v < 0.0 { " -" } else if first { "" } else { " +" };
            let _ = write!(out, "{sign} {} x{c}", libm::fabs(v));
        };
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (c, &v) in self.cost.iter().enumerate() {
            if v != 0.0 {
                term(&mut out, first, v, c);
                first = false;
            }
        }
        if first {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows()];
        for &(r, c, v) in &self.entries {
            rows[r].push((c, v));
        }
        for (r, row) in rows.iter().enumerate() {
            let _ = write!(out, " r{r}:");
            let mut first = true;
            for &(c, v) in row {
                term(&mut out, first, v, c);
                first = false;
            }
            if first {
                out.push_str(" 0 x0");
            }
            let op = match self.senses[r] {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", self.rhs[r]);
        }
        out.push_str("Bounds\n");
        for (c, b) in self.bounds.iter().enumerate() {
            let line = match *b {
                Bound::Free => format!(" x{c} free\n"),
                Bound::Lower(l) => format!(" x{c} >= {l}\n"),
                Bound::Upper(u) => format!(" -inf <= x{c} <= {u}\n"),
                Bound::Box(l, u) => format!(" {l} <= x{c} <= {u}\n"),
            };
            out.push_str(&line);
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpError {
    IterationLimit(usize),
    Malformed(&'static str),
}

impl fmt::Display for LpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpError::IterationLimit(n) => write!(f, "simplex iteration limit {n} reached"),
            LpError::Malformed(what) => write!(f, "malformed LP: {what}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            pivot_tol: 1e-11,
            max_iterations: 1_000_000,
            degenerate_switch: 50,
        }
    }
}

impl LpOptions {
    /// Options for perturbed problems, whose offsets sit below the default
    /// reduced-cost tolerance.
    pub fn perturbed() -> LpOptions {
        LpOptions { optimality_tol: 1e-13, ..LpOptions::default() }
    }
}

pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_with(problem, &LpOptions::default())
}

// Original variable = shift + sum of coef * standard column.
struct VarMap {
    shift: f64,
    cols: [(usize, f64); 2],
    len: usize,
}

struct Tableau {
    width: usize,
    rows: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64]) {
        let w = self.width;
        let inv = 1.0 / self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = obj[pc];
        if f != 0.0 {
            for (v, p) in obj.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

fn run_phase(
    tab: &mut Tableau,
    obj: &mut [f64],
    allowed: usize,
    opts: &LpOptions,
    iterations: &mut usize,
) -> Result<PhaseEnd, LpError> {
    let mut degenerate_run = 0usize;
    loop {
        let bland = degenerate_run >= opts.degenerate_switch;
        let mut enter = usize::MAX;
        let mut best = -opts.optimality_tol;
        for c in 0..allowed {
            let d = obj[c];
            if d < best {
                enter = c;
                if bland {
                    break;
                }
                best = d;
            }
        }
        if enter == usize::MAX {
            return Ok(PhaseEnd::Optimal);
        }
        let mut leave = usize::MAX;
        let mut ratio = f64::INFINITY;
        for r in 0..tab.rows {
            let a = tab.at(r, enter);
            if a > opts.pivot_tol {
                let q = tab.rhs(r).max(0.0) / a;
                let better = if leave == usize::MAX {
                    true
                } else {
                    let tie = libm::fabs(q - ratio) <= 1e-12 * (1.0 + ratio);
                    if tie { tab.basis[r] < tab.basis[leave] } else { q < ratio }
                };
                if better {
                    ratio = q;
                    leave = r;
                }
            }
        }
        if leave == usize::MAX {
            return Ok(PhaseEnd::Unbounded);
        }
        if ratio <= 1e-12 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        tab.pivot(leave, enter, obj);
        *iterations += 1;
        if *iterations >= opts.max_iterations {
            return Err(LpError::IterationLimit(opts.max_iterations));
        }
    }
}

pub fn solve_with(problem: &LpProblem, opts: &LpOptions) -> Result<LpSolution, LpError> {
    problem.check()?;
    let n = problem.ncols();
    let mut maps = Vec::with_capacity(n);
    let mut std_cols = 0usize;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for b in &problem.bounds {
        let map = match *b {
            Bound::Lower(l) => {
                std_cols += 1;
                VarMap { shift: l, cols: [(std_cols - 1, 1.0), (0, 0.0)], len: 1 }
            }
            Bound::Upper(u) => {
                std_cols += 1;
                VarMap { shift: u, cols: [(std_cols - 1, -1.0), (0, 0.0)], len: 1 }
            }
            Bound::Box(l, u) => {
                std_cols += 1;
                extra_rows.push((std_cols - 1, u - l));
                VarMap { shift: l, cols: [(std_cols - 1, 1.0), (0, 0.0)], len: 1 }
            }
            Bound::Free => {
                std_cols += 2;
                VarMap { shift: 0.0, cols: [(std_cols - 2, 1.0), (std_cols - 1, -1.0)], len: 2 }
            }
        };
        maps.push(map);
    }

    // Rows in standard columns, with rhs adjusted for shifts.
    let m_orig = problem.nrows();
    let m_rows = m_orig + extra_rows.len();
    let mut dense = vec![0.0; m_rows * std_cols];
    let mut rhs: Vec<f64> = problem.rhs.clone();
    let mut senses: Vec<Sense> = problem.senses.clone();
    for &(r, c, v) in &problem.entries {
        let map = &maps[c];
        rhs[r] -= v * map.shift;
        for &(sc, coef) in &map.cols[..map.len] {
            dense[r * std_cols + sc] += v * coef;
        }
    }
    for (e, &(sc, width)) in extra_rows.iter().enumerate() {
        dense[(m_orig + e) * std_cols + sc] = 1.0;
        rhs.push(width);
        senses.push(Sense::Le);
    }
    let mut std_cost = vec![0.0; std_cols];
    for (c, map) in maps.iter().enumerate() {
        for &(sc, coef) in &map.cols[..map.len] {
            std_cost[sc] += problem.cost[c] * coef;
        }
    }

    // Slack per inequality row, artificial where no +1 slack can start the basis.
    let n_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
    let mut slack_of = vec![usize::MAX; m_rows];
    let mut s = std_cols;
    for r in 0..m_rows {
        if senses[r] != Sense::Eq {
            slack_of[r] = s;
            s += 1;
        }
    }
    let mut sign = vec![1.0; m_rows];
    let mut needs_art = vec![false; m_rows];
    for r in 0..m_rows {
        let slack_coef = match senses[r] {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
            Sense::Eq => 0.0,
        };
        if rhs[r] < 0.0 {
            sign[r] = -1.0;
        }
        needs_art[r] = sign[r] * slack_coef != 1.0;
    }
    let n_art = needs_art.iter().filter(|&&b| b).count();
    let art_start = std_cols + n_slack;
    let width = art_start + n_art + 1;
    let mut tab = Tableau { width, rows: m_rows, t: vec![0.0; m_rows * width], basis: vec![0; m_rows] };
    let mut a = art_start;
    for r in 0..m_rows {
        let row = &mut tab.t[r * width..(r + 1) * width];
        for c in 0..std_cols {
            row[c] = sign[r] * dense[r * std_cols + c];
        }
        if slack_of[r] != usize::MAX {
            row[slack_of[r]] = sign[r] * if senses[r] == Sense::Le { 1.0 } else { -1.0 };
        }
        row[width - 1] = sign[r] * rhs[r];
        if needs_art[r] {
            row[a] = 1.0;
            tab.basis[r] = a;
            a += 1;
        } else {
            tab.basis[r] = slack_of[r];
        }
    }

    let mut iterations = 0usize;
    let scale = 1.0 + rhs.iter().fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)));
    if n_art > 0 {
        let mut obj = vec![0.0; width];
        for c in art_start..art_start + n_art {
            obj[c] = 1.0;
        }
        for r in 0..m_rows {
            if tab.basis[r] >= art_start {
                for c in 0..width {
                    obj[c] -= tab.at(r, c);
                }
            }
        }
        run_phase(&mut tab, &mut obj, art_start, opts, &mut iterations)?;
        let infeas = -obj[width - 1];
        if infeas > opts.feasibility_tol * scale {
            return Ok(LpSolution { status: LpStatus::Infeasible, x: vec![0.0; n], objective: 0.0, iterations });
        }
        // Drive zero-level artificials out of the basis; rows with no
        // structural entry are redundant and dropped.
        let mut r = 0;
        while r < tab.rows {
            if tab.basis[r] >= art_start {
                let mut col = usize::MAX;
                let mut best = 1e-9;
                for c in 0..art_start {
                    let v = libm::fabs(tab.at(r, c));
                    if v > best {
                        best = v;
                        col = c;
                    }
                }
                if col != usize::MAX {
                    let mut dummy = vec![0.0; width];
                    tab.pivot(r, col, &mut dummy);
                } else {
                    let w = tab.width;
                    tab.t.drain(r * w..(r + 1) * w);
                    tab.basis.remove(r);
                    tab.rows -= 1;
                    continue;
                }
            }
            r += 1;
        }
    }

    let mut obj = vec![0.0; width];
    obj[..std_cols].copy_from_slice(&std_cost);
    for r in 0..tab.rows {
        let cb = if tab.basis[r] < std_cols { std_cost[tab.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..width {
                obj[c] -= cb * tab.at(r, c);
            }
        }
    }
    let end = run_phase(&mut tab, &mut obj, art_start, opts, &mut iterations)?;
    if let PhaseEnd::Unbounded = end {
        return Ok(LpSolution { status: LpStatus::Unbounded, x: vec![0.0; n], objective: f64::NEG_INFINITY, iterations });
    }
    let mut std_x = vec![0.0; std_cols];
    for r in 0..tab.rows {
        if tab.basis[r] < std_cols {
            std_x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| map.shift + map.cols[..map.len].iter().map(|&(sc, coef)| coef * std_x[sc]).sum::<f64>())
        .collect();
    let objective = problem.objective_at(&x);
    Ok(LpSolution { status: LpStatus::Optimal, x, objective, iterations })
}

/// Sequence of primes `2, 3, 5, ...` of length `count`.
pub fn primes(count: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(count);
    let mut cand = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= cand).all(|&p| cand % p != 0) {
            out.push(cand);
        }
        cand += 1;
    }
    out
}

/// Hands out distinct prime-root offsets `epsilon * sqrt(p) / 2^e`, one prime
/// per perturbed coefficient.
#[derive(Clone, Debug)]
pub struct Perturber {
    epsilon: f64,
    divisor: f64,
    primes: Vec<u64>,
    next: usize,
}

impl Perturber {
    /// `total` is the number of coefficients that will be perturbed.
    pub fn new(epsilon: f64, total: usize) -> Perturber {
        let e = libm::ceil(libm::log2(total.max(1) as f64)) as i32;
        Perturber { epsilon, divisor: libm::ldexp(1.0, e), primes: primes(total), next: 0 }
    }

    pub fn offset(&mut self) -> f64 {
        if self.next >= self.primes.len() {
            let more = primes(self.primes.len() * 2 + 8);
            self.primes = more;
        }
        let p = self.primes[self.next];
        self.next += 1;
        self.epsilon * libm::sqrt(p as f64) / self.divisor
    }

    pub fn perturb(&mut self, values: &mut [f64]) {
        if self.epsilon == 0.0 {
            return;
        }
        for v in values {
            *v += self.offset();
        }
    }

    /// Perturbs probabilities and renormalizes them to sum to one.
    pub fn perturb_probabilities(&mut self, probs: &mut [f64]) {
        if self.epsilon == 0.0 {
            return;
        }
        self.perturb(probs);
        let total: f64 = probs.iter().sum();
        for p in probs {
            *p /= total;
        }
    }
}

pub fn perturb_costs(costs: &[f64], probs: &[f64], epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let mut c = costs.to_vec();
    let mut p = probs.to_vec();
    let mut pert = Perturber::new(epsilon, costs.len() + probs.len());
    pert.perturb(&mut c);
    pert.perturb_probabilities(&mut p);
    (c, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_bounded_max() {
        let mut p = LpProblem::new(1);
        p.cost[0] = -6.0;
        p.add_row(&[(0, 1.0)], Sense::Le, 3.0);
        p.add_row(&[(0, 1.0)], Sense::Le, 2.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        assert!((s.objective + 12.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut p = LpProblem::new(1);
        p.add_row(&[(0, 1.0)], Sense::Le, 1.0);
        p.add_row(&[(0, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
        let mut q = LpProblem::new(1);
        q.cost[0] = -1.0;
        q.bounds[0] = Bound::Free;
        assert_eq!(solve(&q).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_upper_bounds() {
        // max z1 + 2 z2, z free, z1 <= 3, z2 <= 1, z1 + z2 <= 3.5
        let mut p = LpProblem::new(2);
        p.cost = vec![-1.0, -2.0];
        p.bounds = vec![Bound::Upper(3.0), Bound::Free];
        p.add_row(&[(1, 1.0)], Sense::Le, 1.0);
        p.add_row(&[(0, 1.0), (1, 1.0)], Sense::Le, 3.5);
        let s = solve(&p).unwrap();
        assert!((s.x[0] - 2.5).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        p.add_row(&[(0, 1.0), (1, -1.0)], Sense::Eq, 0.0);
        let s = solve(&p).unwrap();
        assert!((s.objective + 3.0).abs() < 1e-12);
    }

    #[test]
    fn lp_format_dump() {
        let mut p = LpProblem::new(2);
        p.cost = vec![1.0, -2.0];
        p.bounds[1] = Bound::Box(0.0, 4.0);
        p.add_row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 1.0);
        let text = p.to_lp_format();
        assert!(text.starts_with("Minimize\n obj: 1 x0 - 2 x1\n"));
        assert!(text.contains(" r0: 1 x0 + 1 x1 >= 1\n"));
        assert!(text.contains(" 0 <= x1 <= 4\n"));
    }

    #[test]
    fn perturbation_identity_at_zero() {
        let (c, p) = perturb_costs(&[6.0, 6.0], &[0.5, 0.5], 0.0);
        assert_eq!(c, vec![6.0, 6.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let (c, p) = perturb_costs(&[6.0, 6.0], &[0.5, 0.5], 1e-9);
        assert_ne!(c[0], c[1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn primes_prefix() {
        assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
    }
}
