//! Compound Poisson demand: sampling, window queries and truncated window pmfs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Clone, Debug, PartialEq)]
pub enum DemandError {
    Empty,
    Dimension,
    NegativeRate,
    BadProbabilities,
    ZeroSize,
    NegativeSize,
    EmptyWindow,
}

impl fmt::Display for DemandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DemandError::Empty => "demand model has no products",
            DemandError::Dimension => "size vectors differ in length",
            DemandError::NegativeRate => "arrival rates must be finite and non-negative",
            DemandError::BadProbabilities => "size probabilities must be positive and sum to 1",
            DemandError::ZeroSize => "order size vector is all zero",
            DemandError::NegativeSize => "order size entries must be non-negative",
            DemandError::EmptyWindow => "window start must precede its end",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SizeDistribution {
    /// Independent unit-size Poisson streams, one rate per product.
    IndependentPoisson { rates: Vec<f64> },
    /// Finite joint pmf over non-negative integer size vectors.
    Joint { sizes: Vec<Vec<i64>>, probs: Vec<f64> },
}

/// Compound Poisson demand with total order rate `rate`.
///
/// Independent Poisson streams are held as a merged process whose sizes are
/// unit vectors `e_i` drawn with probability `rate_i / rate`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandModel {
    m: usize,
    rate: f64,
    kind: SizeDistribution,
    sizes: Vec<Vec<i64>>,
    cum_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl DemandModel {
    pub fn independent_poisson(rates: &[f64]) -> Result<DemandModel, DemandError> {
        let m = rates.len();
        if m == 0 {
            return Err(DemandError::Empty);
        }
        if rates.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(DemandError::NegativeRate);
        }
        let rate: f64 = rates.iter().sum();
        let mut sizes = Vec::new();
        let mut probs = Vec::new();
        for (i, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                let mut e = vec![0; m];
                e[i] = 1;
                sizes.push(e);
                probs.push(r / rate);
            }
        }
        Ok(DemandModel::assemble(
            m,
            rate,
            SizeDistribution::IndependentPoisson { rates: rates.to_vec() },
            sizes,
            probs,
        ))
    }

    pub fn compound(rate: f64, sizes: Vec<Vec<i64>>, probs: Vec<f64>) -> Result<DemandModel, DemandError> {
        if sizes.is_empty() {
            return Err(DemandError::Empty);
        }
        let m = sizes[0].len();
        if m == 0 {
            return Err(DemandError::Empty);
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(DemandError::NegativeRate);
        }
        if sizes.len() != probs.len() || sizes.iter().any(|s| s.len() != m) {
            return Err(DemandError::Dimension);
        }
        if sizes.iter().any(|s| s.iter().any(|&v| v < 0)) {
            return Err(DemandError::NegativeSize);
        }
        if sizes.iter().any(|s| s.iter().all(|&v| v == 0)) {
            return Err(DemandError::ZeroSize);
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(DemandError::BadProbabilities);
        }
        let kind = SizeDistribution::Joint { sizes: sizes.clone(), probs: probs.clone() };
        Ok(DemandModel::assemble(m, rate, kind, sizes, probs))
    }

    fn assemble(m: usize, rate: f64, kind: SizeDistribution, sizes: Vec<Vec<i64>>, probs: Vec<f64>) -> DemandModel {
        let mut acc = 0.0;
        let cum_probs = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        DemandModel { m, rate, kind, sizes, cum_probs, probs }
    }

    pub fn products(&self) -> usize {
        self.m
    }

    /// Total order arrival rate.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn kind(&self) -> &SizeDistribution {
        &self.kind
    }

    /// Demand rate per product per unit time.
    pub fn mean_rate(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.m];
        for (s, p) in self.sizes.iter().zip(&self.probs) {
            for i in 0..self.m {
                mu[i] += self.rate * p * s[i] as f64;
            }
        }
        mu
    }

    fn draw_size(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = unit_uniform(rng);
        let idx = self.cum_probs.partition_point(|&c| c <= u);
        idx.min(self.sizes.len() - 1)
    }
}

/// Mean vector and covariance matrix (row-major) of demand over `duration`.
pub fn moments(model: &DemandModel, duration: f64) -> (Vec<f64>, Vec<f64>) {
    let m = model.m;
    let mean = model.mean_rate().iter().map(|v| v * duration).collect();
    let mut cov = vec![0.0; m * m];
    for (s, p) in model.sizes.iter().zip(&model.probs) {
        for a in 0..m {
            for b in 0..m {
                cov[a * m + b] += duration * model.rate * p * (s[a] * s[b]) as f64;
            }
        }
    }
    (mean, cov)
}

fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Generator for replication `stream` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A realized arrival history on `(start, end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandPath {
    m: usize,
    start: f64,
    end: f64,
    seed: u64,
    stream: u64,
    times: Vec<f64>,
    sizes: Vec<i64>,
    cum: Vec<i64>,
}

impl DemandPath {
    /// Builds a path from explicit arrivals; times must be strictly increasing
    /// and inside `(start, end]`.
    pub fn from_arrivals(m: usize, start: f64, end: f64, arrivals: &[(f64, Vec<i64>)]) -> Result<DemandPath, DemandError> {
        let mut times = Vec::with_capacity(arrivals.len());
        let mut sizes = Vec::with_capacity(arrivals.len() * m);
        let mut last = start;
        for (t, d) in arrivals {
            if d.len() != m {
                return Err(DemandError::Dimension);
            }
            if !(*t > last) || *t > end {
                return Err(DemandError::EmptyWindow);
            }
            if d.iter().any(|&v| v < 0) {
                return Err(DemandError::NegativeSize);
            }
            if d.iter().all(|&v| v == 0) {
                return Err(DemandError::ZeroSize);
            }
            last = *t;
            times.push(*t);
            sizes.extend_from_slice(d);
        }
        Ok(DemandPath::with_cumulative(m, start, end, 0, 0, times, sizes))
    }

    fn with_cumulative(m: usize, start: f64, end: f64, seed: u64, stream: u64, times: Vec<f64>, sizes: Vec<i64>) -> DemandPath {
        let mut cum = vec![0; (times.len() + 1) * m];
        for a in 0..times.len() {
            for i in 0..m {
                cum[(a + 1) * m + i] = cum[a * m + i] + sizes[a * m + i];
            }
        }
        DemandPath { m, start, end, seed, stream, times, sizes, cum }
    }

    pub fn products(&self) -> usize {
        self.m
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn seed(&self) -> (u64, u64) {
        (self.seed, self.stream)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn size(&self, a: usize) -> &[i64] {
        &self.sizes[a * self.m..(a + 1) * self.m]
    }

    /// Number of arrivals at or before `t`.
    pub fn count_through(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Cumulative demand over arrivals with index below `a`.
    pub fn cumulative(&self, a: usize) -> &[i64] {
        &self.cum[a * self.m..(a + 1) * self.m]
    }

    /// Demand arriving in `(t1, t2]`.
    pub fn window_demand(&self, t1: f64, t2: f64) -> Result<Vec<i64>, DemandError> {
        if !(t1 < t2) {
            return Err(DemandError::EmptyWindow);
        }
        let (a, b) = (self.count_through(t1), self.count_through(t2));
        Ok((0..self.m).map(|i| self.cum[b * self.m + i] - self.cum[a * self.m + i]).collect())
    }
}

/// Samples arrivals on `(t_start, t_end]` with generator `(seed, stream)`.
pub fn sample_path(model: &DemandModel, t_start: f64, t_end: f64, seed: u64, stream: u64) -> DemandPath {
    let mut rng = replication_rng(seed, stream);
    let mut times = Vec::new();
    let mut sizes = Vec::new();
    if model.rate > 0.0 && t_end > t_start {
        let mut t = t_start;
        loop {
            let u = unit_uniform(&mut rng);
            t += -libm::log1p(-u) / model.rate;
            if t > t_end {
                break;
            }
            let s = model.draw_size(&mut rng);
            times.push(t);
            sizes.extend_from_slice(&model.sizes[s]);
        }
    }
    DemandPath::with_cumulative(model.m, t_start, t_end, seed, stream, times, sizes)
}

/// Simulation clock resolution.
pub const TICKS_PER_UNIT: i64 = 1_000_000;

/// `t` in ticks, nearest tick.
pub fn to_ticks(t: f64) -> i64 {
    libm::rint(t * TICKS_PER_UNIT as f64) as i64
}

/// `t` in ticks when it lies on the tick grid.
pub fn exact_ticks(t: f64) -> Option<i64> {
    let raw = t * TICKS_PER_UNIT as f64;
    let r = libm::rint(raw);
    if libm::fabs(raw - r) <= 1e-3 {
        Some(r as i64)
    } else {
        None
    }
}

/// A demand path on the integer tick grid; arrivals sharing a tick are merged.
#[derive(Clone, Debug, PartialEq)]
pub struct TickPath {
    m: usize,
    start: i64,
    end: i64,
    ticks: Vec<i64>,
    sizes: Vec<i64>,
    cum: Vec<i64>,
}

impl TickPath {
    pub fn from_path(path: &DemandPath) -> TickPath {
        let m = path.m;
        let start = to_ticks(path.start);
        let end = to_ticks(path.end);
        let mut ticks: Vec<i64> = Vec::with_capacity(path.len());
        let mut sizes: Vec<i64> = Vec::with_capacity(path.len() * m);
        for a in 0..path.len() {
            let t = to_ticks(path.times[a]).clamp(start + 1, end);
            if ticks.last() == Some(&t) {
                let base = sizes.len() - m;
                for (s, v) in sizes[base..].iter_mut().zip(path.size(a)) {
                    *s += v;
                }
            } else {
                ticks.push(t);
                sizes.extend_from_slice(path.size(a));
            }
        }
        let mut cum = vec![0; (ticks.len() + 1) * m];
        for a in 0..ticks.len() {
            for i in 0..m {
                cum[(a + 1) * m + i] = cum[a * m + i] + sizes[a * m + i];
            }
        }
        TickPath { m, start, end, ticks, sizes, cum }
    }

    pub fn products(&self) -> usize {
        self.m
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn tick(&self, a: usize) -> i64 {
        self.ticks[a]
    }

    pub fn size(&self, a: usize) -> &[i64] {
        &self.sizes[a * self.m..(a + 1) * self.m]
    }

    /// Number of arrivals at or before tick `t`.
    pub fn count_through(&self, t: i64) -> usize {
        self.ticks.partition_point(|&s| s <= t)
    }

    /// Writes the demand arriving in `(t1, t2]` into `out` (zero when `t2 <= t1`).
    pub fn window_into(&self, t1: i64, t2: i64, out: &mut [i64]) {
        if t2 <= t1 {
            out.iter_mut().for_each(|v| *v = 0);
            return;
        }
        let (a, b) = (self.count_through(t1), self.count_through(t2));
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cum[b * self.m + i] - self.cum[a * self.m + i];
        }
    }

    pub fn window(&self, t1: i64, t2: i64) -> Vec<i64> {
        let mut out = vec![0; self.m];
        self.window_into(t1, t2, &mut out);
        out
    }
}

/// Pmf of `D(t, t + duration) ∧ M` on the grid `{0..=M}^m`, tail mass lumped at `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPmf {
    pub duration: f64,
    pub truncation: i64,
    m: usize,
    atoms: Vec<i64>,
    probs: Vec<f64>,
}

impl WindowPmf {
    pub fn point_mass(m: usize, duration: f64, truncation: i64, d: &[i64]) -> WindowPmf {
        WindowPmf { duration, truncation, m, atoms: d.to_vec(), probs: vec![1.0] }
    }

    /// Builds a pmf from explicit atoms; zero-probability atoms are dropped.
    pub fn from_atoms(m: usize, duration: f64, truncation: i64, atoms: &[(Vec<i64>, f64)]) -> WindowPmf {
        let mut flat = Vec::new();
        let mut probs = Vec::new();
        for (d, p) in atoms {
            if *p > 0.0 {
                flat.extend_from_slice(d);
                probs.push(*p);
            }
        }
        WindowPmf { duration, truncation, m, atoms: flat, probs }
    }

    pub fn products(&self) -> usize {
        self.m
    }

    /// Number of atoms with positive probability.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn atom(&self, a: usize) -> &[i64] {
        &self.atoms[a * self.m..(a + 1) * self.m]
    }

    pub fn prob(&self, a: usize) -> f64 {
        self.probs[a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn probs_mut(&mut self) -> &mut [f64] {
        &mut self.probs
    }

    /// Probability of the vector `d`, zero if absent.
    pub fn probability_of(&self, d: &[i64]) -> f64 {
        (0..self.len()).find(|&a| self.atom(a) == d).map(|a| self.probs[a]).unwrap_or(0.0)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.m];
        for a in 0..self.len() {
            for i in 0..self.m {
                mu[i] += self.probs[a] * self.atom(a)[i] as f64;
            }
        }
        mu
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Univariate Poisson pmf on `0..=M` with the upper tail lumped at `M`.
pub fn truncated_poisson(mean: f64, truncation: i64) -> Vec<f64> {
    let mm = truncation.max(0) as usize;
    let mut p = vec![0.0; mm + 1];
    if mean <= 0.0 {
        p[0] = 1.0;
        return p;
    }
    let log_mean = libm::log(mean);
    let term = |r: usize| libm::exp(-mean + r as f64 * log_mean - libm::lgamma(r as f64 + 1.0));
    for (r, slot) in p.iter_mut().enumerate().take(mm) {
        *slot = term(r);
    }
    // Sum the tail upward from M; beyond the mode terms fall geometrically.
    let mut tail = 0.0;
    let mut r = mm;
    loop {
        let t = term(r);
        tail += t;
        if (r as f64) > mean && t < 1e-18 * tail.max(1e-300) {
            break;
        }
        if t == 0.0 && (r as f64) > mean {
            break;
        }
        r += 1;
    }
    p[mm] = tail;
    p
}

/// Default truncation for a window: `max_i ceil(mean_i + 6 sd_i)`.
pub fn default_truncation(model: &DemandModel, duration: f64) -> i64 {
    let (mean, cov) = moments(model, duration);
    let m = model.m;
    (0..m)
        .map(|i| libm::ceil(mean[i] + 6.0 * libm::sqrt(cov[i * m + i])) as i64)
        .max()
        .unwrap_or(0)
}

pub fn window_distribution(model: &DemandModel, duration: f64, truncation: i64) -> WindowPmf {
    let m = model.m;
    let mm = truncation.max(0);
    if duration <= 0.0 || mm == 0 || model.rate == 0.0 {
        return WindowPmf::point_mass(m, duration, mm, &vec![0; m]);
    }
    let side = (mm + 1) as usize;
    let grid = match &model.kind {
        SizeDistribution::IndependentPoisson { rates } => {
            let marginals: Vec<Vec<f64>> = rates.iter().map(|r| truncated_poisson(r * duration, mm)).collect();
            let mut grid = vec![1.0];
            for marg in &marginals {
                let mut next = Vec::with_capacity(grid.len() * side);
                for &g in &grid {
                    for &q in marg {
                        next.push(g * q);
                    }
                }
                grid = next;
            }
            grid
        }
        SizeDistribution::Joint { .. } => compound_grid(model, duration, mm),
    };
    let mut atoms = Vec::new();
    let mut probs = Vec::new();
    let mut idx = vec![0i64; m];
    for &p in &grid {
        if p > 0.0 {
            atoms.extend_from_slice(&idx);
            probs.push(p);
        }
        for i in (0..m).rev() {
            idx[i] += 1;
            if idx[i] <= mm {
                break;
            }
            idx[i] = 0;
        }
    }
    WindowPmf { duration, truncation: mm, m, atoms, probs }
}

// Clamped convolution powers of the size pmf weighted by Poisson counts; the
// count series stops once the unaccounted mass is below 1e-12.
fn compound_grid(model: &DemandModel, duration: f64, mm: i64) -> Vec<f64> {
    let m = model.m;
    let side = (mm + 1) as usize;
    let cells = side.pow(m as u32);
    let flat = |d: &[i64]| d.iter().fold(0usize, |acc, &v| acc * side + v.min(mm) as usize);
    let mut offsets = vec![vec![0i64; m]; cells];
    for (c, off) in offsets.iter_mut().enumerate() {
        let mut rem = c;
        for i in (0..m).rev() {
            off[i] = (rem % side) as i64;
            rem /= side;
        }
    }
    let lambda = model.rate * duration;
    let mut conv = vec![0.0; cells];
    conv[0] = 1.0;
    let mut out = vec![0.0; cells];
    let mut weight = libm::exp(-lambda);
    let mut accounted = 0.0;
    let mut k = 0u64;
    let mut log_weight = -lambda;
    loop {
        if weight > 0.0 {
            for c in 0..cells {
                out[c] += weight * conv[c];
            }
        }
        accounted += weight;
        if 1.0 - accounted < 1e-12 && (k as f64) >= lambda {
            break;
        }
        // Everything already clamped at M stays there; once all mass is at
        // the corner further convolution changes nothing.
        let mut next = vec![0.0; cells];
        for c in 0..cells {
            if conv[c] == 0.0 {
                continue;
            }
            for (s, p) in model.sizes.iter().zip(&model.probs) {
                let d: Vec<i64> = offsets[c].iter().zip(s).map(|(a, b)| a + b).collect();
                next[flat(&d)] += conv[c] * p;
            }
        }
        conv = next;
        k += 1;
        log_weight += libm::log(lambda) - libm::log(k as f64);
        weight = libm::exp(log_weight);
        if k > 100_000 {
            break;
        }
    }
    out
}
