//! Student-t summaries of replication averages.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Debug, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
    pub replications: usize,
    pub ci95: (f64, f64),
    pub ci999: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 replications, got {0}")]
    TooFew(usize),
    #[error("non-finite replication value")]
    NonFinite,
}

/// Two-sided Student-t quantile `t_{(1 + level)/2, df}`.
pub fn t_quantile(level: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    dist.inverse_cdf(0.5 + level / 2.0)
}

pub fn estimate_long_run_cost(values: &[f64]) -> Result<CostEstimate, StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std_dev = var.sqrt();
    let std_err = std_dev / (n as f64).sqrt();
    let df = (n - 1) as f64;
    let half = |level: f64| t_quantile(level, df) * std_err;
    let (h95, h999) = (half(0.95), half(0.999));
    Ok(CostEstimate {
        mean,
        std_dev,
        std_err,
        replications: n,
        ci95: (mean - h95, mean + h95),
        ci999: (mean - h999, mean + h999),
    })
}
