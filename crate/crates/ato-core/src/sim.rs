//! Continuous-review discrete-event simulation of the SP-driven policy.
//!
//! The clock runs on integer ticks. Within a tick the order is: order
//! arrivals, demand arrival, target updates (longest lead first), orders,
//! allocation. Cost integrals are exact integer tick sums.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::demand::{exact_ticks, sample_path, to_ticks, DemandModel, TickPath};
use crate::model::AtoSystem;
use crate::policy::{allocate, check_allocation, ideal_backlog_targets, order_decision, AllocationCheck, Policy, PolicyError, TargetState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Simulated time after 0.
    pub horizon: f64,
    pub warmup_fraction: f64,
    /// Audit every this many event ticks (0 disables audits).
    pub audit_every: u64,
    /// Record the tracking gaps of inventory positions and backlogs.
    pub track_gaps: bool,
}

impl SimOptions {
    /// `max(10^4, 1250 L_K)` time units with a 10% warm-up and sparse audits.
    pub fn for_system(system: &AtoSystem) -> SimOptions {
        let lk = system.lead_time(system.classes() - 1);
        SimOptions { horizon: (1250.0 * lk).max(1e4), warmup_fraction: 0.1, audit_every: 1000, track_gaps: false }
    }
}

/// Identities and serving conditions checked by the audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Identity {
    /// `IP = I + R - A B`.
    InventoryPosition,
    /// `A^k B(t) - I^k(t) = A^k D(t - L_k, t) - IP^k(t - L_k)`.
    Balance,
    /// Longest-lead positions sit at their constant target.
    BaseStock,
    /// Negative on-hand, backlog or pipeline quantity.
    Sign,
    Allocation(AllocationCheck),
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::InventoryPosition => f.write_str("inventory position = on hand + in transit - A backlog"),
            Identity::Balance => f.write_str("component balance = lead-time demand - lagged inventory position"),
            Identity::BaseStock => f.write_str("longest-lead inventory position = base-stock target"),
            Identity::Sign => f.write_str("non-negative stocks"),
            Identity::Allocation(AllocationCheck::Blocked) => f.write_str("allocation: servable product left above target"),
            Identity::Allocation(AllocationCheck::OverServed) => f.write_str("allocation: served beyond excess over target"),
            Identity::Allocation(AllocationCheck::Dominance) => f.write_str("allocation: backlog dominates target without equality"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub identity: Identity,
    /// Component or product index.
    pub index: usize,
    pub lhs: i64,
    pub rhs: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Simulator state at the clock (after all events of the current tick).
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub clock: i64,
    pub on_hand: Vec<i64>,
    /// Per component, `(arrival tick, quantity)` in arrival order.
    pub pipeline: Vec<VecDeque<(i64, i64)>>,
    pub backlog: Vec<i64>,
    pub position: Vec<i64>,
    pub served: Vec<i64>,
    /// Per component, inventory-position jumps `(tick, value)` kept for one `L_K`.
    pub position_history: Vec<VecDeque<(i64, i64)>>,
    pub lead: Vec<i64>,
    pub class_of: Vec<usize>,
    pub bom: Vec<i64>,
}

impl SimState {
    /// Empty system at tick `start`.
    pub fn empty(system: &AtoSystem, start: i64) -> Result<SimState, SimError> {
        let n = system.components();
        let m = system.products();
        let mut lead = Vec::with_capacity(system.classes());
        for k in 0..system.classes() {
            let l = system.lead_time(k);
            lead.push(exact_ticks(l).ok_or(SimError::Policy(PolicyError::OffGrid(l)))?);
        }
        Ok(SimState {
            clock: start,
            on_hand: vec![0; n],
            pipeline: vec![VecDeque::new(); n],
            backlog: vec![0; m],
            position: vec![0; n],
            served: vec![0; m],
            position_history: (0..n).map(|_| VecDeque::from(vec![(start, 0)])).collect(),
            lead,
            class_of: (0..n).map(|j| system.class_of(j)).collect(),
            bom: system.bom().to_vec(),
        })
    }

    fn row_dot(&self, j: usize, v: &[i64]) -> i64 {
        let m = self.backlog.len();
        self.bom[j * m..(j + 1) * m].iter().zip(v).map(|(a, x)| a * x).sum()
    }

    /// Inventory position of component `j` at tick `t` (0 before the history starts).
    pub fn position_at(&self, j: usize, t: i64) -> i64 {
        let h = &self.position_history[j];
        let idx = h.partition_point(|(s, _)| *s <= t);
        if idx == 0 {
            0
        } else {
            h[idx - 1].1
        }
    }

    fn record_positions(&mut self) {
        let t = self.clock;
        for (j, h) in self.position_history.iter_mut().enumerate() {
            let v = self.position[j];
            match h.back_mut() {
                Some((_, last)) if *last == v => {}
                Some((s, last)) if *s == t => *last = v,
                _ => h.push_back((t, v)),
            }
        }
    }

    fn prune(&mut self, keep_from: i64) {
        for h in self.position_history.iter_mut() {
            while h.len() > 1 && h[1].0 <= keep_from {
                h.pop_front();
            }
        }
    }
}

/// Checks the flow identities at the state's clock. The balance identity is
/// checked for `t >= 0` only.
pub fn state_audit(state: &SimState, path: &TickPath) -> AuditReport {
    let mut report = AuditReport::default();
    let m = state.backlog.len();
    let t = state.clock;
    let mut d = vec![0i64; m];
    for j in 0..state.on_hand.len() {
        let in_transit: i64 = state.pipeline[j].iter().map(|(_, q)| q).sum();
        if state.on_hand[j] < 0 || state.pipeline[j].iter().any(|(_, q)| *q < 0) {
            report.violations.push(Violation { identity: Identity::Sign, index: j, lhs: state.on_hand[j], rhs: 0 });
        }
        let rhs = state.on_hand[j] + in_transit - state.row_dot(j, &state.backlog);
        if state.position[j] != rhs {
            report.violations.push(Violation { identity: Identity::InventoryPosition, index: j, lhs: state.position[j], rhs });
        }
        if t >= 0 {
            let l = state.lead[state.class_of[j]];
            path.window_into(t - l, t, &mut d);
            let lhs = state.row_dot(j, &state.backlog) - state.on_hand[j];
            let rhs = state.row_dot(j, &d) - state.position_at(j, t - l);
            if lhs != rhs {
                report.violations.push(Violation { identity: Identity::Balance, index: j, lhs, rhs });
            }
        }
    }
    for (i, b) in state.backlog.iter().enumerate() {
        if *b < 0 {
            report.violations.push(Violation { identity: Identity::Sign, index: i, lhs: *b, rhs: 0 });
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditFailure {
    pub report: AuditReport,
    pub state: SimState,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    Policy(PolicyError),
    Audit(Box<AuditFailure>),
    Options(&'static str),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Policy(e) => write!(f, "{e}"),
            SimError::Audit(a) => {
                write!(f, "audit failed at tick {} (seed {}, stream {}):", a.state.clock, a.seed, a.stream)?;
                for v in &a.report.violations {
                    write!(f, " [{} at index {}: {} vs {}]", v.identity, v.index, v.lhs, v.rhs)?;
                }
                write!(f, " state: {}", dump(&a.state))
            }
            SimError::Options(s) => f.write_str(s),
        }
    }
}

fn dump(state: &SimState) -> String {
    alloc::format!(
        "on_hand={:?} backlog={:?} position={:?} in_transit={:?}",
        state.on_hand,
        state.backlog,
        state.position,
        state.pipeline.iter().map(|p| p.iter().map(|(_, q)| q).sum::<i64>()).collect::<Vec<_>>()
    )
}

impl From<PolicyError> for SimError {
    fn from(e: PolicyError) -> Self {
        SimError::Policy(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationResult {
    pub seed: u64,
    pub stream: u64,
    /// Long-run average cost over the post-warm-up window.
    pub avg_cost: f64,
    pub holding_cost: f64,
    pub backlog_cost: f64,
    pub avg_on_hand: Vec<f64>,
    pub avg_backlog: Vec<f64>,
    /// Ticks at which at least one event happened.
    pub events: u64,
    pub audits: u64,
    pub audit_failures: u64,
    pub allocation_epochs: u64,
    /// Per component, `max (IP_j - target_j)` over event ticks after warm-up.
    pub max_position_gap: Vec<i64>,
    /// Per product, `max (B_i - ideal target_i)^+` over allocation epochs after warm-up.
    pub max_backlog_gap: Vec<i64>,
    /// `max |ideal targets - targets|_inf` over allocation epochs after warm-up.
    pub max_target_deviation: i64,
    /// Largest ratio of that deviation to `sum_j |IP_j - target_j|` at the lagged times.
    pub max_deviation_ratio: f64,
    /// Epochs where the targets differ although every lagged position was on target.
    pub unexplained_deviations: u64,
}

/// Tick sums kept as integers: `sum_t v(t) * dt` per coordinate.
#[derive(Clone, Debug)]
struct Integrals {
    on_hand: Vec<i128>,
    backlog: Vec<i128>,
}

/// Runs one replication with demand stream `(seed, stream)`.
pub fn run(
    system: &AtoSystem,
    demand: &DemandModel,
    policy: &Policy,
    options: &SimOptions,
    seed: u64,
    stream: u64,
) -> Result<ReplicationResult, SimError> {
    if !(options.horizon > 0.0) {
        return Err(SimError::Options("horizon must be positive"));
    }
    if !(0.0..1.0).contains(&options.warmup_fraction) {
        return Err(SimError::Options("warm-up fraction must be in [0, 1)"));
    }
    let kk = system.classes();
    let lk_time = system.lead_time(kk - 1);
    let raw = sample_path(demand, -lk_time, options.horizon, seed, stream);
    let path = TickPath::from_path(&raw);
    run_path(system, policy, options, &path, seed, stream)
}

/// Runs one replication over a given tick path on `(-L_K, T]`.
pub fn run_path(
    system: &AtoSystem,
    policy: &Policy,
    options: &SimOptions,
    path: &TickPath,
    seed: u64,
    stream: u64,
) -> Result<ReplicationResult, SimError> {
    let n = system.components();
    let m = system.products();
    let kk = system.classes();
    let bom = system.bom();
    let mut targets = TargetState::new(system, policy.solver.clone())?;
    let mut backlog_lp = policy.backlog.clone();
    let mut state = SimState::empty(system, path.start())?;
    let lead = state.lead.clone();
    let lk = lead[kk - 1];
    if path.start() != -lk {
        return Err(SimError::Options("demand path must start at -L_K"));
    }
    let end = path.end();
    let warm = to_ticks(options.horizon * options.warmup_fraction);
    let ranges: Vec<core::ops::Range<usize>> = (0..kk).map(|k| system.class_range(k)).collect();

    // Shifted update pointers: class k is refreshed at s + (L_j - L_k) for j > k.
    let mut shifted: Vec<(usize, i64, usize)> = Vec::new();
    for k in 0..kk.saturating_sub(1) {
        for j in k + 1..kk {
            shifted.push((k, lead[j] - lead[k], 0));
        }
    }
    let mut next_demand = 0usize;
    let mut started = vec![false; kk];
    let mut zero_done = false;

    let mut integrals = Integrals { on_hand: vec![0; n], backlog: vec![0; m] };
    let mut due = vec![false; kk];
    let mut q = vec![0i64; n];
    let mut b_before = vec![0i64; m];
    let mut served = vec![0i64; m];
    let mut bstar_gap = vec![0i64; m];
    let mut ip_gap = vec![i64::MIN; n];
    let (mut max_dev, mut max_ratio, mut unexplained) = (0i64, 0.0f64, 0u64);
    let mut prev = path.start();
    let mut events = 0u64;
    let mut audits = 0u64;
    let mut epochs = 0u64;

    loop {
        // Next event tick.
        let mut t = i64::MAX;
        if next_demand < path.len() {
            t = t.min(path.tick(next_demand));
        }
        for p in &state.pipeline {
            if let Some(&(a, _)) = p.front() {
                t = t.min(a);
            }
        }
        for (k, s) in started.iter().enumerate() {
            if !s {
                t = t.min(-lead[k]);
            }
        }
        for &(_, shift, ptr) in &shifted {
            if ptr < path.len() {
                t = t.min(path.tick(ptr) + shift);
            }
        }
        if !zero_done {
            t = t.min(0);
        }
        if t > end {
            break;
        }

        // Cost integral over [prev, t) clipped to the statistics window.
        let (a, b) = (prev.max(warm), t.min(end));
        if b > a {
            let dt = (b - a) as i128;
            for (acc, v) in integrals.on_hand.iter_mut().zip(&state.on_hand) {
                *acc += *v as i128 * dt;
            }
            for (acc, v) in integrals.backlog.iter_mut().zip(&state.backlog) {
                *acc += *v as i128 * dt;
            }
        }
        prev = t;
        state.clock = t;
        events += 1;

        // Order arrivals.
        let mut changed = false;
        for j in 0..n {
            while let Some(&(a, qty)) = state.pipeline[j].front() {
                if a != t {
                    break;
                }
                state.pipeline[j].pop_front();
                state.on_hand[j] += qty;
                changed = true;
            }
        }

        // Demand arrival.
        let mut demand_now = false;
        if next_demand < path.len() && path.tick(next_demand) == t {
            let d = path.size(next_demand);
            for (b, v) in state.backlog.iter_mut().zip(d) {
                *b += v;
            }
            for j in 0..n {
                state.position[j] -= system.row_dot(j, d);
            }
            next_demand += 1;
            demand_now = true;
            changed = true;
        }

        // Target updates, longest lead first.
        for d in due.iter_mut() {
            *d = false;
        }
        for (k, s) in started.iter_mut().enumerate() {
            if !*s && t == -lead[k] {
                *s = true;
                due[k] = true;
            }
        }
        for (k, shift, ptr) in shifted.iter_mut() {
            while *ptr < path.len() && path.tick(*ptr) + *shift == t {
                *ptr += 1;
                if t >= -lead[*k] {
                    due[*k] = true;
                }
            }
        }
        for k in (0..kk).rev() {
            if t < -lead[k] {
                continue;
            }
            if demand_now {
                due[k] = true;
            }
            if due[k] {
                targets.refresh(k, t, path)?;
            }
        }

        // Orders.
        for k in 0..kk {
            if !due[k] {
                continue;
            }
            let tgt = targets.target(k).ok_or(PolicyError::NotStarted { class: k, tick: t })?;
            for (jj, j) in ranges[k].clone().enumerate() {
                let (qty, ip) = order_decision(tgt[jj], state.position[j]);
                if qty > 0 {
                    state.pipeline[j].push_back((t + lead[k], qty));
                    state.position[j] = ip;
                }
            }
        }
        state.record_positions();

        // Allocation.
        let mut allocated = false;
        if t >= 0 && (changed || !zero_done) {
            for j in 0..n {
                q[j] = system.row_dot(j, &state.backlog) - state.on_hand[j];
            }
            let bt = backlog_lp.targets(&q)?;
            b_before.copy_from_slice(&state.backlog);
            allocate(bom, m, &mut state.on_hand, &mut state.backlog, bt, &mut served);
            for (acc, s) in state.served.iter_mut().zip(&served) {
                *acc += s;
            }
            allocated = true;
            epochs += 1;
        }
        if t >= 0 {
            zero_done = true;
        }

        // Audits.
        if options.audit_every > 0 && events % options.audit_every == 0 {
            audits += 1;
            let mut report = state_audit(&state, path);
            let base = targets.base_stock();
            for (jj, j) in ranges[kk - 1].clone().enumerate() {
                if state.position[j] != base[jj] {
                    report.violations.push(Violation { identity: Identity::BaseStock, index: j, lhs: state.position[j], rhs: base[jj] });
                }
            }
            if allocated {
                let bt = backlog_lp.targets(&q)?;
                if let Some((check, i)) = check_allocation(bom, m, &state.on_hand, &b_before, &state.backlog, bt, &served) {
                    report.violations.push(Violation { identity: Identity::Allocation(check), index: i, lhs: state.backlog[i], rhs: bt[i] });
                }
            }
            if !report.passed() {
                return Err(SimError::Audit(Box::new(AuditFailure { report, state, seed, stream })));
            }
        }

        // Tracking gaps.
        if options.track_gaps && t >= warm {
            for k in 0..kk {
                if let Some(tgt) = targets.target(k) {
                    for (jj, j) in ranges[k].clone().enumerate() {
                        ip_gap[j] = ip_gap[j].max(state.position[j] - tgt[jj]);
                    }
                }
            }
            if allocated {
                let ideal = ideal_backlog_targets(system, &mut backlog_lp, &targets, t, path)?;
                let actual = backlog_lp.targets(&q)?;
                let mut dev = 0i64;
                for i in 0..m {
                    bstar_gap[i] = bstar_gap[i].max(state.backlog[i] - ideal[i]);
                    dev = dev.max((ideal[i] - actual[i]).abs());
                }
                let mut lagged = 0i64;
                for k in 0..kk {
                    let tl = t - lead[k];
                    let tgt = targets.target_at(k, tl).ok_or(PolicyError::NotStarted { class: k, tick: tl })?;
                    for (jj, j) in ranges[k].clone().enumerate() {
                        lagged += (state.position_at(j, tl) - tgt[jj]).abs();
                    }
                }
                max_dev = max_dev.max(dev);
                if lagged > 0 {
                    max_ratio = max_ratio.max(dev as f64 / lagged as f64);
                } else if dev > 0 {
                    unexplained += 1;
                }
            }
        }

        if events % 4096 == 0 {
            state.prune(t - lk);
            targets.prune(t);
        }
    }

    // Tail of the integral up to the horizon.
    let (a, b) = (prev.max(warm), end);
    if b > a {
        let dt = (b - a) as i128;
        for (acc, v) in integrals.on_hand.iter_mut().zip(&state.on_hand) {
            *acc += *v as i128 * dt;
        }
        for (acc, v) in integrals.backlog.iter_mut().zip(&state.backlog) {
            *acc += *v as i128 * dt;
        }
    }
    let span = (end - warm) as f64;
    let avg_on_hand: Vec<f64> = integrals.on_hand.iter().map(|&v| v as f64 / span).collect();
    let avg_backlog: Vec<f64> = integrals.backlog.iter().map(|&v| v as f64 / span).collect();
    let holding_cost: f64 = system.holding().iter().zip(&avg_on_hand).map(|(h, v)| h * v).sum();
    let backlog_cost: f64 = system.backlog().iter().zip(&avg_backlog).map(|(b, v)| b * v).sum();
    Ok(ReplicationResult {
        seed,
        stream,
        avg_cost: holding_cost + backlog_cost,
        holding_cost,
        backlog_cost,
        avg_on_hand,
        avg_backlog,
        events,
        audits,
        audit_failures: 0,
        allocation_epochs: epochs,
        max_position_gap: if options.track_gaps { ip_gap.iter().map(|&g| g.max(0)).collect() } else { Vec::new() },
        max_backlog_gap: if options.track_gaps { bstar_gap } else { Vec::new() },
        max_target_deviation: max_dev,
        max_deviation_ratio: max_ratio,
        unexplained_deviations: unexplained,
    })
}
