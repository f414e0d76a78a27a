//! Problem instance: bill of materials, lead-time classes and costs.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

/// An unvalidated instance as read from a config or built by hand.
///
/// `bom[j][i]` is the number of units of component `j` used by one unit of
/// product `i`. `component_class[j]` is the 0-based index into `lead_times`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSystem {
    pub bom: Vec<Vec<f64>>,
    pub lead_times: Vec<f64>,
    pub component_class: Vec<usize>,
    pub holding: Vec<f64>,
    pub backlog: Vec<f64>,
}

impl RawSystem {
    /// Builds a raw instance from one lead time per component; the distinct
    /// values become the classes.
    pub fn from_component_lead_times(
        bom: Vec<Vec<f64>>,
        component_lead_times: &[f64],
        holding: Vec<f64>,
        backlog: Vec<f64>,
    ) -> RawSystem {
        let mut lead_times: Vec<f64> = component_lead_times.to_vec();
        lead_times.sort_by(|a, b| a.total_cmp(b));
        lead_times.dedup();
        let component_class = component_lead_times
            .iter()
            .map(|l| lead_times.iter().position(|x| x == l).unwrap_or(0))
            .collect();
        RawSystem { bom, lead_times, component_class, holding, backlog }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelError {
    Empty,
    Dimension(&'static str),
    UnusedComponent(usize),
    UnusedProduct(usize),
    NonIntegerBom { component: usize, product: usize },
    NegativeBom { component: usize, product: usize },
    LeadTimesNotIncreasing,
    NonPositiveLeadTime,
    NonPositiveCost { holding: bool, index: usize },
    ClassOutOfRange(usize),
    EmptyClass(usize),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Empty => write!(f, "empty bill of materials"),
            ModelError::Dimension(what) => write!(f, "dimension mismatch: {what}"),
            ModelError::UnusedComponent(j) => write!(f, "unused component {j}"),
            ModelError::UnusedProduct(i) => write!(f, "unused product {i}"),
            ModelError::NonIntegerBom { component, product } => {
                write!(f, "non-integer bom entry at component {component}, product {product}")
            }
            ModelError::NegativeBom { component, product } => {
                write!(f, "negative bom entry at component {component}, product {product}")
            }
            ModelError::LeadTimesNotIncreasing => write!(f, "lead times not strictly increasing"),
            ModelError::NonPositiveLeadTime => write!(f, "lead times must be positive"),
            ModelError::NonPositiveCost { holding: true, index } => {
                write!(f, "non-positive holding cost for component {index}")
            }
            ModelError::NonPositiveCost { holding: false, index } => {
                write!(f, "non-positive backlog cost for product {index}")
            }
            ModelError::ClassOutOfRange(j) => write!(f, "component {j} has no lead-time class"),
            ModelError::EmptyClass(k) => write!(f, "lead-time class {k} has no components"),
        }
    }
}

/// A validated ATO instance. Components are sorted by lead-time class.
#[derive(Clone, Debug, PartialEq)]
pub struct AtoSystem {
    m: usize,
    n: usize,
    bom: Vec<i64>,
    lead_times: Vec<f64>,
    class_start: Vec<usize>,
    holding: Vec<f64>,
    backlog: Vec<f64>,
}

pub fn validate_system(raw: &RawSystem) -> Result<AtoSystem, ModelError> {
    let n = raw.bom.len();
    if n == 0 {
        return Err(ModelError::Empty);
    }
    let m = raw.bom[0].len();
    if m == 0 {
        return Err(ModelError::Empty);
    }
    if raw.bom.iter().any(|r| r.len() != m) {
        return Err(ModelError::Dimension("bom rows differ in length"));
    }
    if raw.holding.len() != n {
        return Err(ModelError::Dimension("holding costs vs components"));
    }
    if raw.backlog.len() != m {
        return Err(ModelError::Dimension("backlog costs vs products"));
    }
    if raw.component_class.len() != n {
        return Err(ModelError::Dimension("component classes vs components"));
    }
    for (j, row) in raw.bom.iter().enumerate() {
        for (i, &a) in row.iter().enumerate() {
            if !a.is_finite() || a - libm::trunc(a) != 0.0 {
                return Err(ModelError::NonIntegerBom { component: j, product: i });
            }
            if a < 0.0 {
                return Err(ModelError::NegativeBom { component: j, product: i });
            }
        }
    }
    for (j, row) in raw.bom.iter().enumerate() {
        if row.iter().all(|&a| a == 0.0) {
            return Err(ModelError::UnusedComponent(j));
        }
    }
    for i in 0..m {
        if raw.bom.iter().all(|r| r[i] == 0.0) {
            return Err(ModelError::UnusedProduct(i));
        }
    }
    if raw.lead_times.is_empty() {
        return Err(ModelError::Dimension("no lead times"));
    }
    if raw.lead_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ModelError::LeadTimesNotIncreasing);
    }
    if raw.lead_times.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(ModelError::NonPositiveLeadTime);
    }
    for (j, &h) in raw.holding.iter().enumerate() {
        if !(h > 0.0) || !h.is_finite() {
            return Err(ModelError::NonPositiveCost { holding: true, index: j });
        }
    }
    for (i, &b) in raw.backlog.iter().enumerate() {
        if !(b > 0.0) || !b.is_finite() {
            return Err(ModelError::NonPositiveCost { holding: false, index: i });
        }
    }
    let k_count = raw.lead_times.len();
    for (j, &k) in raw.component_class.iter().enumerate() {
        if k >= k_count {
            return Err(ModelError::ClassOutOfRange(j));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| raw.component_class[j]);
    let mut class_start = Vec::with_capacity(k_count + 1);
    let mut pos = 0;
    for k in 0..k_count {
        class_start.push(pos);
        let count = order.iter().filter(|&&j| raw.component_class[j] == k).count();
        if count == 0 {
            return Err(ModelError::EmptyClass(k));
        }
        pos += count;
    }
    class_start.push(n);
    let mut bom = Vec::with_capacity(n * m);
    for &j in &order {
        bom.extend(raw.bom[j].iter().map(|&a| a as i64));
    }
    Ok(AtoSystem {
        m,
        n,
        bom,
        lead_times: raw.lead_times.clone(),
        class_start,
        holding: order.iter().map(|&j| raw.holding[j]).collect(),
        backlog: raw.backlog.clone(),
    })
}

impl AtoSystem {
    pub fn products(&self) -> usize {
        self.m
    }

    pub fn components(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.lead_times.len()
    }

    /// Units of component `j` per unit of product `i`.
    #[inline]
    pub fn a(&self, j: usize, i: usize) -> i64 {
        self.bom[j * self.m + i]
    }

    pub fn bom_row(&self, j: usize) -> &[i64] {
        &self.bom[j * self.m..(j + 1) * self.m]
    }

    pub fn bom(&self) -> &[i64] {
        &self.bom
    }

    pub fn lead_times(&self) -> &[f64] {
        &self.lead_times
    }

    /// Lead time of class `k` (0-based).
    pub fn lead_time(&self, k: usize) -> f64 {
        self.lead_times[k]
    }

    /// Component indices of class `k` (0-based).
    pub fn class_range(&self, k: usize) -> Range<usize> {
        self.class_start[k]..self.class_start[k + 1]
    }

    pub fn class_of(&self, j: usize) -> usize {
        self.class_start[1..].iter().position(|&s| j < s).unwrap_or(0)
    }

    pub fn holding(&self) -> &[f64] {
        &self.holding
    }

    pub fn backlog(&self) -> &[f64] {
        &self.backlog
    }

    /// `A_j . v` for an m-vector `v`.
    pub fn row_dot(&self, j: usize, v: &[i64]) -> i64 {
        self.bom_row(j).iter().zip(v).map(|(a, x)| a * x).sum()
    }

    pub fn to_raw(&self) -> RawSystem {
        let mut component_class = Vec::with_capacity(self.n);
        for k in 0..self.classes() {
            component_class.extend(self.class_range(k).map(|_| k));
        }
        RawSystem {
            bom: (0..self.n)
                .map(|j| self.bom_row(j).iter().map(|&a| a as f64).collect())
                .collect(),
            lead_times: self.lead_times.clone(),
            component_class,
            holding: self.holding.clone(),
            backlog: self.backlog.clone(),
        }
    }

    /// Same instance with replaced costs; costs are given in sorted component order.
    pub fn with_costs(&self, holding: &[f64], backlog: &[f64]) -> Result<AtoSystem, ModelError> {
        let mut raw = self.to_raw();
        raw.holding = holding.to_vec();
        raw.backlog = backlog.to_vec();
        validate_system(&raw)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveCosts {
    pub c: Vec<f64>,
}

/// `c_i = b_i + sum_j a_ji h_j`, the cost rate removed by serving one unit of product `i`.
pub fn effective_unit_cost(system: &AtoSystem) -> EffectiveCosts {
    let c = (0..system.m)
        .map(|i| {
            system.backlog[i]
                + (0..system.n).map(|j| system.a(j, i) as f64 * system.holding[j]).sum::<f64>()
        })
        .collect();
    EffectiveCosts { c }
}
