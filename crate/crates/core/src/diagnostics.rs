//! Goodness-of-fit summaries for a fitted model: exponential residuals, Q-Q
//! data with a simulated envelope, and Kolmogorov distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::exceedance_scores;
use crate::model::{Dataset, ExecMode, FitConfig};
use crate::stats::{quantile_sorted, sort_ascending};

/// Default number of simulated samples behind the Q-Q envelope.
pub const DEFAULT_ENVELOPE_REPS: usize = 1000;

/// `exp(z_i' theta(T_i)) log(Y_i / w)` for every exceedance, ascending.
/// Approximately standard exponential under the model.
pub fn exponential_residuals(data: &Dataset, cfg: &FitConfig, mode: ExecMode) -> Result<Vec<f64>> {
    let mut e: Vec<f64> = exceedance_scores(data, cfg, mode)?.into_iter().map(|s| s.score).collect();
    sort_ascending(&mut e);
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    /// Standard exponential quantiles at `(l - 0.5) / n0`.
    pub theoretical: Vec<f64>,
    /// Sorted residuals.
    pub empirical: Vec<f64>,
    pub envelope_low: Option<Vec<f64>>,
    pub envelope_high: Option<Vec<f64>>,
}

impl QqData {
    pub fn len(&self) -> usize {
        self.empirical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empirical.is_empty()
    }

    /// Share of points outside the envelope, if one was computed.
    pub fn fraction_outside(&self) -> Option<f64> {
        let (lo, hi) = (self.envelope_low.as_ref()?, self.envelope_high.as_ref()?);
        let outside = self
            .empirical
            .iter()
            .zip(lo.iter().zip(hi))
            .filter(|(e, (l, h))| *e < *l || *e > *h)
            .count();
        Some(outside as f64 / self.len() as f64)
    }
}

/// Q-Q data for `residuals` against the standard exponential. The envelope
/// holds the pointwise 2.5% and 97.5% quantiles of the order statistics of
/// `envelope_reps` simulated samples; zero replications skip it. Sample `r`
/// uses stream `r` of `seed`, so the result does not depend on `mode`.
pub fn qq_data(residuals: &[f64], envelope_reps: usize, seed: u64, mode: ExecMode) -> Result<QqData> {
    let n0 = residuals.len();
    if n0 == 0 {
        return Err(Error::EmptyResiduals);
    }
    let mut empirical = residuals.to_vec();
    sort_ascending(&mut empirical);
    let theoretical = (1..=n0)
        .map(|l| -(1.0 - (l as f64 - 0.5) / n0 as f64).ln())
        .collect();
    if envelope_reps == 0 {
        return Ok(QqData {
            theoretical,
            empirical,
            envelope_low: None,
            envelope_high: None,
        });
    }
    let draw = |r: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut v: Vec<f64> = (0..n0).map(|_| rng.sample(Exp1)).collect();
        sort_ascending(&mut v);
        v
    };
    let samples: Vec<Vec<f64>> = match mode {
        ExecMode::Serial => (0..envelope_reps).map(draw).collect(),
        ExecMode::Parallel => (0..envelope_reps).into_par_iter().map(draw).collect(),
    };
    let mut low = Vec::with_capacity(n0);
    let mut high = Vec::with_capacity(n0);
    let mut column = vec![0.0; envelope_reps];
    for l in 0..n0 {
        for (c, s) in column.iter_mut().zip(&samples) {
            *c = s[l];
        }
        sort_ascending(&mut column);
        low.push(quantile_sorted(&column, 0.025));
        high.push(quantile_sorted(&column, 0.975));
    }
    Ok(QqData {
        theoretical,
        empirical,
        envelope_low: Some(low),
        envelope_high: Some(high),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Uniform01,
    Exp1,
}

impl Reference {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Reference::Uniform01 => x.clamp(0.0, 1.0),
            Reference::Exp1 => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x).exp_m1()
                }
            }
        }
    }
}

/// Kolmogorov distance between the empirical CDF of `values` and `reference`.
pub fn ks_statistic(values: &[f64], reference: Reference) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    sort_ascending(&mut v);
    let n = v.len() as f64;
    Ok(v.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = reference.cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}
