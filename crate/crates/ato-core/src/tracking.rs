//! The stochastic tracking model: a process that follows a target upward
//! instantly and is drawn down by weighted demand,
//! `W(t) = max(W(t-) - a . d(t), T(t))`.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::demand::{sample_path, DemandModel, DemandPath};

/// Target process generators.
#[derive(Clone)]
pub enum TargetGenerator {
    Constant(f64),
    /// `T(t) = -kappa * w . D(t - lag L, t)` with `lag` a fraction of `L`.
    MovingWindow { kappa: f64, weights: Vec<f64>, lag: f64 },
    /// User function of `(t, path)`, evaluated at demand arrivals and at the start.
    Callback(Arc<dyn Fn(f64, &DemandPath) -> f64 + Send + Sync>),
}

impl fmt::Debug for TargetGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetGenerator::Constant(v) => write!(f, "Constant({v})"),
            TargetGenerator::MovingWindow { kappa, weights, lag } => {
                write!(f, "MovingWindow {{ kappa: {kappa}, weights: {weights:?}, lag: {lag} }}")
            }
            TargetGenerator::Callback(_) => f.write_str("Callback"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrackingSpec {
    pub demand: DemandModel,
    /// Non-negative demand weights, at least one positive.
    pub weights: Vec<f64>,
    /// Lags as fractions of `L`, each in `[0, 1]`.
    pub lags: Vec<f64>,
    /// Start time as a fraction of `L`, in `[-1 + max lag, 0]`.
    pub start: f64,
    /// `W0 = w0_scale * sqrt(L)`.
    pub w0_scale: f64,
    pub target: TargetGenerator,
    /// Horizon as a multiple of `L`.
    pub horizon_factor: f64,
}

impl TrackingSpec {
    /// One product at rate 1, unit weight, constant target 0, `t0 = -L`,
    /// `W0 = 5 sqrt(L)`, horizon `20 L`.
    pub fn default_spec() -> TrackingSpec {
        TrackingSpec {
            demand: DemandModel::independent_poisson(&[1.0]).expect("unit rate"),
            weights: alloc::vec![1.0],
            lags: Vec::new(),
            start: -1.0,
            w0_scale: 5.0,
            target: TargetGenerator::Constant(0.0),
            horizon_factor: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrackingError {
    /// `a . mu = 0`: the process has no downward drift.
    ZeroDrift,
    BadWeights,
    BadLag(f64),
    BadStart(f64),
    BadHorizon,
}

impl fmt::Display for TrackingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackingError::ZeroDrift => f.write_str("weighted mean demand rate is zero"),
            TrackingError::BadWeights => f.write_str("weights must be non-negative, finite, one per product, with one positive"),
            TrackingError::BadLag(s) => write!(f, "lag {s} outside [0, 1]"),
            TrackingError::BadStart(s) => write!(f, "start {s} outside [-1 + max lag, 0]"),
            TrackingError::BadHorizon => f.write_str("horizon must be positive"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingRun {
    /// `sup_{t >= 0} (W - T) / sqrt(L)`.
    pub sup_gap: f64,
    /// Time (unscaled) at which the supremum is attained.
    pub sup_time: f64,
    /// Smallest `W - T` seen at any event (never negative).
    pub min_gap: f64,
    pub events: u64,
}

pub fn validate(spec: &TrackingSpec) -> Result<(), TrackingError> {
    let m = spec.demand.products();
    if spec.weights.len() != m || spec.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || spec.weights.iter().all(|&w| w == 0.0) {
        return Err(TrackingError::BadWeights);
    }
    let drift: f64 = spec.weights.iter().zip(spec.demand.mean_rate()).map(|(w, r)| w * r).sum();
    if !(drift > 0.0) {
        return Err(TrackingError::ZeroDrift);
    }
    let mut max_lag: f64 = 0.0;
    let mut lags = spec.lags.clone();
    if let TargetGenerator::MovingWindow { lag, .. } = &spec.target {
        lags.push(*lag);
    }
    for &s in &lags {
        if !(0.0..=1.0).contains(&s) {
            return Err(TrackingError::BadLag(s));
        }
        max_lag = max_lag.max(s);
    }
    if !(spec.start >= -1.0 + max_lag && spec.start <= 0.0) {
        return Err(TrackingError::BadStart(spec.start));
    }
    if !(spec.horizon_factor > 0.0) {
        return Err(TrackingError::BadHorizon);
    }
    Ok(())
}

/// Simulates the tracking recursion for lead time `l` over `[t0, horizon]`
/// (`horizon = horizon_factor * l` when `None`).
pub fn run_tracking(spec: &TrackingSpec, l: f64, horizon: Option<f64>, seed: u64, stream: u64) -> Result<TrackingRun, TrackingError> {
    validate(spec)?;
    if !(l > 0.0) {
        return Err(TrackingError::BadHorizon);
    }
    let t0 = spec.start * l;
    let end = horizon.unwrap_or(spec.horizon_factor * l);
    if !(end > 0.0) {
        return Err(TrackingError::BadHorizon);
    }
    // The moving window looks back `lag * l`, so the path starts early enough.
    let look = match &spec.target {
        TargetGenerator::MovingWindow { lag, .. } => lag * l,
        _ => 0.0,
    };
    let path = sample_path(&spec.demand, t0 - look, end, seed, stream);
    Ok(track_path(spec, l, t0, end, &path))
}

fn target_at(spec: &TrackingSpec, l: f64, t: f64, path: &DemandPath) -> f64 {
    match &spec.target {
        TargetGenerator::Constant(v) => *v,
        TargetGenerator::MovingWindow { kappa, weights, lag } => {
            let w = lag * l;
            if w <= 0.0 {
                return 0.0;
            }
            let (a, b) = (path.count_through(t - w), path.count_through(t));
            let (ca, cb) = (path.cumulative(a), path.cumulative(b));
            -kappa * weights.iter().zip(ca.iter().zip(cb)).map(|(x, (p, q))| x * (q - p) as f64).sum::<f64>()
        }
        TargetGenerator::Callback(f) => f(t, path),
    }
}

/// Runs the recursion over a given path; the path must cover `(t0 - lag L, end]`.
pub fn track_path(spec: &TrackingSpec, l: f64, t0: f64, end: f64, path: &DemandPath) -> TrackingRun {
    let scale = libm::sqrt(l);
    let mut w = (spec.w0_scale * scale).max(target_at(spec, l, t0, path));
    let mut sup = f64::NEG_INFINITY;
    let mut sup_time = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut events = 0u64;
    // Window exits make a moving-window target jump up between arrivals.
    let exit_shift = match &spec.target {
        TargetGenerator::MovingWindow { lag, .. } => Some(lag * l),
        _ => None,
    };
    let times = path.times();
    let mut next = path.count_through(t0);
    let mut exit_ptr = match exit_shift {
        Some(s) => path.count_through(t0 - s),
        None => times.len(),
    };
    let mut t = t0;
    let observe = |t: f64, w: f64, target: f64, sup: &mut f64, sup_time: &mut f64, min_gap: &mut f64| {
        let gap = w - target;
        *min_gap = min_gap.min(gap);
        if t >= 0.0 && gap / scale > *sup {
            *sup = gap / scale;
            *sup_time = t;
        }
    };
    let t_first = target_at(spec, l, t0, path);
    observe(t0, w, t_first, &mut sup, &mut sup_time, &mut min_gap);
    loop {
        let ta = if next < times.len() { times[next] } else { f64::INFINITY };
        let te = match exit_shift {
            Some(s) if exit_ptr < times.len() => times[exit_ptr] + s,
            _ => f64::INFINITY,
        };
        // The supremum over t >= 0 also sees the state carried into time 0.
        if t < 0.0 && ta.min(te) > 0.0 && end >= 0.0 {
            let target = target_at(spec, l, 0.0, path);
            observe(0.0, w, target, &mut sup, &mut sup_time, &mut min_gap);
        }
        let tn = ta.min(te);
        if tn > end {
            break;
        }
        t = tn;
        events += 1;
        if ta <= te {
            let d = path.size(next);
            w -= spec.weights.iter().zip(d).map(|(a, v)| a * *v as f64).sum::<f64>();
            next += 1;
        }
        if exit_shift.is_some() {
            while exit_ptr < times.len() && times[exit_ptr] + exit_shift.unwrap_or(0.0) <= t {
                exit_ptr += 1;
            }
        }
        let target = target_at(spec, l, t, path);
        w = w.max(target);
        observe(t, w, target, &mut sup, &mut sup_time, &mut min_gap);
    }
    TrackingRun { sup_gap: sup.max(0.0), sup_time, min_gap, events }
}
