//! Nested convex search over integer stage decisions.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::vertices::{dual_vertices, DualVertices};
use super::{Backend, SpError, SpModel, SpSolution};
use crate::lp::{solve, Bound, LpProblem, LpStatus, Sense};

const MAX_WIDENINGS: u32 = 30;
const MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Debug)]
struct Memo {
    map: BTreeMap<Vec<i64>, (Vec<i64>, f64, u64)>,
    ages: BTreeMap<u64, Vec<i64>>,
    tick: u64,
    capacity: usize,
}

impl Memo {
    fn new(capacity: usize) -> Memo {
        Memo { map: BTreeMap::new(), ages: BTreeMap::new(), tick: 0, capacity: capacity.max(1) }
    }

    fn get(&mut self, key: &[i64]) -> Option<(Vec<i64>, f64)> {
        let tick = self.tick;
        let entry = self.map.get_mut(key)?;
        let old = entry.2;
        entry.2 = tick;
        let out = (entry.0.clone(), entry.1);
        if old != tick {
            if let Some(k) = self.ages.remove(&old) {
                self.ages.insert(tick, k);
            }
            self.tick += 1;
        }
        Some(out)
    }

    fn insert(&mut self, key: Vec<i64>, y: Vec<i64>, value: f64) {
        while self.map.len() >= self.capacity {
            let Some((_, k)) = self.ages.pop_first() else { break };
            self.map.remove(&k);
        }
        let tick = self.tick;
        self.tick += 1;
        self.ages.insert(tick, key.clone());
        self.map.insert(key, (y, value, tick));
    }
}

// Stage-1 data: per atom, the dot products of every dual vertex with A d.
#[derive(Debug)]
struct TerminalData {
    nv: usize,
    va: Vec<f64>,
    probs: Vec<f64>,
    mean_cd: f64,
}

/// Memoized nested solver. Cloning shares the immutable model data and copies
/// the memo, so each thread can own one.
#[derive(Clone, Debug)]
pub struct NestedSolver {
    model: Arc<SpModel>,
    vertices: Arc<DualVertices>,
    terminal: Arc<TerminalData>,
    memo: Vec<Memo>,
    box_widenings: u32,
    evaluations: u64,
}

impl NestedSolver {
    pub fn new(model: Arc<SpModel>, memo_capacity: usize) -> NestedSolver {
        let vertices = dual_vertices(model.n, model.m, &model.bom, &model.c);
        let pmf = &model.tree.stages[0];
        let nv = vertices.len();
        let mut va = Vec::with_capacity(pmf.len() * nv);
        let mut mean_cd = 0.0;
        let mut ad = vec![0i64; model.n];
        for a in 0..pmf.len() {
            let d = pmf.atom(a);
            for (j, slot) in ad.iter_mut().enumerate() {
                *slot = model.row_dot(j, d);
            }
            for v in 0..nv {
                va.push(vertices.vertex(v).iter().zip(&ad).map(|(k, q)| k * *q as f64).sum());
            }
            mean_cd += pmf.prob(a) * model.c.iter().zip(d).map(|(c, v)| c * *v as f64).sum::<f64>();
        }
        let terminal = TerminalData { nv, va, probs: pmf.probs().to_vec(), mean_cd };
        let stages = model.stages();
        NestedSolver {
            model,
            vertices: Arc::new(vertices),
            terminal: Arc::new(terminal),
            memo: (0..stages).map(|_| Memo::new(memo_capacity)).collect(),
            box_widenings: 0,
            evaluations: 0,
        }
    }

    pub fn vertices(&self) -> &DualVertices {
        &self.vertices
    }

    /// Objective evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn memo_len(&self) -> usize {
        self.memo.iter().map(|m| m.map.len()).sum()
    }

    /// `phi^0(Y, x)` for the full decision vector `Y`.
    pub fn terminal_value(&self, y_full: &[i64], x: &[i64]) -> f64 {
        let model = &self.model;
        let q: Vec<i64> = (0..model.n).map(|j| model.row_dot(j, x) - y_full[j]).collect();
        let cx: f64 = model.c.iter().zip(x).map(|(c, v)| c * *v as f64).sum();
        self.vertices.support(&q) - cx
    }

    pub fn solve(&mut self, k: usize, upstream: &[i64], x: &[i64]) -> Result<SpSolution, SpError> {
        let before = self.box_widenings;
        let (y, value) = self.phi(k, upstream, x)?;
        Ok(SpSolution {
            stage: k,
            y: y.iter().map(|&v| v as f64).collect(),
            y_int: y,
            objective: value,
            backend: Backend::Nested,
            box_widenings: self.box_widenings - before,
        })
    }

    /// Total box widenings over the solver's lifetime.
    pub fn box_widenings(&self) -> u32 {
        self.box_widenings
    }

    /// Optimal `y^k` and `phi^k` for upstream `y^{k+1..K}` and window demand `x`.
    pub fn phi(&mut self, k: usize, upstream: &[i64], x: &[i64]) -> Result<(Vec<i64>, f64), SpError> {
        let mut key = Vec::with_capacity(upstream.len() + x.len());
        key.extend_from_slice(upstream);
        key.extend_from_slice(x);
        if let Some(hit) = self.memo[k - 1].get(&key) {
            return Ok(hit);
        }
        let (y, value) = self.search(k, upstream, x)?;
        self.memo[k - 1].insert(key, y.clone(), value);
        Ok((y, value))
    }

    // E[phi^{k-1}(y, upstream, x + D^k)].
    fn expect(&mut self, k: usize, y: &[i64], upstream: &[i64], x: &[i64]) -> Result<f64, SpError> {
        self.evaluations += 1;
        let model = self.model.clone();
        if k == 1 {
            let t = &*self.terminal;
            let nv = t.nv;
            let mut vb = [0.0f64; 64];
            let mut vb_vec;
            let vb: &mut [f64] = if nv <= 64 {
                &mut vb[..nv]
            } else {
                vb_vec = vec![0.0; nv];
                &mut vb_vec
            };
            for (v, slot) in vb.iter_mut().enumerate() {
                let vert = self.vertices.vertex(v);
                let mut s = 0.0;
                for j in 0..model.n {
                    let yj = if j < y.len() { y[j] } else { upstream[j - y.len()] };
                    s += vert[j] * (model.row_dot(j, x) - yj) as f64;
                }
                *slot = s;
            }
            let mut acc = 0.0;
            for (row, &p) in t.va.chunks_exact(nv).zip(&t.probs) {
                let mut best = f64::NEG_INFINITY;
                for (a, b) in vb.iter().zip(row) {
                    let s = a + b;
                    if s > best {
                        best = s;
                    }
                }
                acc += p * best;
            }
            let cx: f64 = model.c.iter().zip(x).map(|(c, v)| c * *v as f64).sum();
            return Ok(acc - cx - t.mean_cd);
        }
        let mut tail = Vec::with_capacity(y.len() + upstream.len());
        tail.extend_from_slice(y);
        tail.extend_from_slice(upstream);
        let pmf = &model.tree.stages[k - 1];
        let mut xd = vec![0i64; model.m];
        let mut acc = 0.0;
        for a in 0..pmf.len() {
            for ((s, xv), dv) in xd.iter_mut().zip(x).zip(pmf.atom(a)) {
                *s = xv + dv;
            }
            acc += pmf.prob(a) * self.phi(k - 1, &tail, &xd)?.1;
        }
        Ok(acc)
    }

    fn objective(
        &mut self,
        cache: &mut BTreeMap<Vec<i64>, f64>,
        k: usize,
        y: &[i64],
        upstream: &[i64],
        x: &[i64],
    ) -> Result<f64, SpError> {
        if let Some(&v) = cache.get(y) {
            return Ok(v);
        }
        let range = self.model.stage_range(k);
        let hy: f64 = self.model.h[range].iter().zip(y).map(|(h, v)| h * *v as f64).sum();
        let v = hy + self.expect(k, y, upstream, x)?;
        cache.insert(y.to_vec(), v);
        Ok(v)
    }

    fn search(&mut self, k: usize, upstream: &[i64], x: &[i64]) -> Result<(Vec<i64>, f64), SpError> {
        let model = self.model.clone();
        let range = model.stage_range(k);
        let bx = model.solution_box(k, upstream, x);
        let (mut lo, mut hi) = (bx.lo, bx.hi);
        let mut mean = vec![0.0; model.m];
        for s in 0..k {
            for (acc, v) in mean.iter_mut().zip(model.tree.stages[s].mean()) {
                *acc += v;
            }
        }
        let mut y: Vec<i64> = range
            .clone()
            .map(|j| {
                let row = &model.bom[j * model.m..(j + 1) * model.m];
                let e: f64 = row.iter().zip(x.iter().zip(&mean)).map(|(a, (xv, mv))| *a as f64 * (*xv as f64 + mv)).sum();
                libm::rint(e) as i64
            })
            .collect();
        let mut cache = BTreeMap::new();
        let mut widenings = 0;
        loop {
            for v in y.iter_mut() {
                *v = (*v).clamp(lo, hi);
            }
            let value = self.descend(&mut cache, k, &mut y, upstream, x, lo, hi)?;
            let at_edge = y.iter().any(|&v| v == lo || v == hi);
            if !at_edge || widenings >= MAX_WIDENINGS {
                return Ok((y, value));
            }
            widenings += 1;
            self.box_widenings += 1;
            let w = (hi - lo).max(1);
            lo -= w;
            hi += w;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &mut self,
        cache: &mut BTreeMap<Vec<i64>, f64>,
        k: usize,
        y: &mut Vec<i64>,
        upstream: &[i64],
        x: &[i64],
        lo: i64,
        hi: i64,
    ) -> Result<f64, SpError> {
        let nk = y.len();
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for j in 0..nk {
                let t = self.line_min(cache, k, y, j, upstream, x, lo, hi)?;
                if t != y[j] {
                    y[j] = t;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            let current = self.objective(cache, k, y, upstream, x)?;
            if nk < 2 {
                return Ok(current);
            }
            let tol = 1e-11 * (1.0 + libm::fabs(current));
            let mut best = current - tol;
            let mut best_y: Option<Vec<i64>> = None;
            let mut step = vec![-1i64; nk];
            loop {
                if step.iter().any(|&s| s != 0) {
                    let cand: Vec<i64> = y.iter().zip(&step).map(|(a, b)| a + b).collect();
                    if cand.iter().all(|&v| v >= lo && v <= hi) {
                        let v = self.objective(cache, k, &cand, upstream, x)?;
                        if v < best {
                            best = v;
                            best_y = Some(cand);
                        }
                    }
                }
                let mut i = 0;
                while i < nk {
                    step[i] += 1;
                    if step[i] <= 1 {
                        break;
                    }
                    step[i] = -1;
                    i += 1;
                }
                if i == nk {
                    break;
                }
            }
            match best_y {
                Some(b) => *y = b,
                None => return Ok(current),
            }
        }
        Err(SpError::NonConvergent)
    }

    // Smallest t in [lo, hi] with g(t+1) - g(t) >= -tol, i.e. the smallest
    // minimizer of the convex restriction along coordinate j.
    #[allow(clippy::too_many_arguments)]
    fn line_min(
        &mut self,
        cache: &mut BTreeMap<Vec<i64>, f64>,
        k: usize,
        y: &[i64],
        j: usize,
        upstream: &[i64],
        x: &[i64],
        lo: i64,
        hi: i64,
    ) -> Result<i64, SpError> {
        let mut point = y.to_vec();
        let mut settled = |solver: &mut Self, t: i64| -> Result<bool, SpError> {
            if t >= hi {
                return Ok(true);
            }
            point[j] = t;
            let g0 = solver.objective(cache, k, &point, upstream, x)?;
            point[j] = t + 1;
            let g1 = solver.objective(cache, k, &point, upstream, x)?;
            Ok(g1 - g0 >= -1e-11 * (1.0 + libm::fabs(g0)))
        };
        let s = y[j].clamp(lo, hi);
        let (mut bad, mut good);
        if settled(self, s)? {
            good = s;
            let mut step = 1;
            loop {
                if good <= lo {
                    return Ok(lo);
                }
                let c = (good - step).max(lo);
                if settled(self, c)? {
                    good = c;
                    step *= 2;
                } else {
                    bad = c;
                    break;
                }
            }
        } else {
            bad = s;
            let mut step = 1;
            loop {
                let c = (bad + step).min(hi);
                if settled(self, c)? {
                    good = c;
                    break;
                }
                bad = c;
                step *= 2;
            }
        }
        while good - bad > 1 {
            let mid = bad + (good - bad) / 2;
            if settled(self, mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    }

    /// `(sum_k h^k . E[y^{k*}], c . E[B*])` over the scenario tree, with the
    /// terminal backlog `B*` from an explicit LP per distinct balance vector.
    pub fn decomposition(&mut self, _y_top: &[i64]) -> Result<(f64, f64), SpError> {
        let model = self.model.clone();
        let kk = model.stages();
        let mut bmemo: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        let mut acc_h = 0.0;
        let mut acc_b = 0.0;
        let x = vec![0i64; model.m];
        self.traverse(&model, kk, &[], &x, 1.0, &mut acc_h, &mut acc_b, &mut bmemo)?;
        Ok((acc_h, acc_b))
    }

    #[allow(clippy::too_many_arguments)]
    fn traverse(
        &mut self,
        model: &SpModel,
        k: usize,
        upstream: &[i64],
        x: &[i64],
        prob: f64,
        acc_h: &mut f64,
        acc_b: &mut f64,
        bmemo: &mut BTreeMap<Vec<i64>, f64>,
    ) -> Result<(), SpError> {
        let (y, _) = self.phi(k, upstream, x)?;
        let range = model.stage_range(k);
        *acc_h += prob * model.h[range].iter().zip(&y).map(|(h, v)| h * *v as f64).sum::<f64>();
        let mut tail = y;
        tail.extend_from_slice(upstream);
        let pmf = &model.tree.stages[k - 1];
        let mut xd = vec![0i64; model.m];
        if k == 1 {
            let mut q = vec![0i64; model.n];
            let ax: Vec<i64> = (0..model.n).map(|j| model.row_dot(j, x) - tail[j]).collect();
            let mut sum = 0.0;
            for a in 0..pmf.len() {
                let d = pmf.atom(a);
                for j in 0..model.n {
                    q[j] = ax[j] + model.row_dot(j, d);
                }
                let cb = match bmemo.get(&q) {
                    Some(&v) => v,
                    None => {
                        let v = backlog_lp_value(model, &q)?;
                        bmemo.insert(q.clone(), v);
                        v
                    }
                };
                sum += pmf.prob(a) * cb;
            }
            *acc_b += prob * sum;
            return Ok(());
        }
        for a in 0..pmf.len() {
            for ((s, xv), dv) in xd.iter_mut().zip(x).zip(pmf.atom(a)) {
                *s = xv + dv;
            }
            self.traverse(model, k - 1, &tail, &xd, prob * pmf.prob(a), acc_h, acc_b, bmemo)?;
        }
        Ok(())
    }
}

/// `min c . B` subject to `B >= 0`, `A B >= q`.
fn backlog_lp_value(model: &SpModel, q: &[i64]) -> Result<f64, SpError> {
    if q.iter().all(|&v| v <= 0) {
        return Ok(0.0);
    }
    let mut p = LpProblem::new(model.m);
    p.cost = model.c.clone();
    p.bounds = vec![Bound::Lower(0.0); model.m];
    for j in 0..model.n {
        let row: Vec<(usize, f64)> = (0..model.m).map(|i| (i, model.bom[j * model.m + i] as f64)).collect();
        p.add_row(&row, Sense::Ge, q[j] as f64);
    }
    let sol = solve(&p)?;
    if sol.status != LpStatus::Optimal {
        return Err(SpError::LpStatus(sol.status));
    }
    Ok(sol.objective)
}
