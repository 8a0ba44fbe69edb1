//! Two-step tuning: D-fold cross-validation of the bandwidths at a
//! pre-determined threshold, then threshold selection by minimizing the
//! discrepancy between the transformed exceedances and the uniform law.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{exceedance_scores, fit_at};
use crate::kernels::KernelSpec;
use crate::model::{Dataset, ExecMode, FitConfig};
use crate::stats::sort_ascending;

/// How the discrepancy compares the ordered residuals with a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyVariant {
    /// `U_(l)` against the empirical CDF of the `U`s evaluated at `l / n0`.
    #[default]
    Literal,
    /// `U_(l)` against `l / n0` directly.
    Cvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub bandwidths: Vec<f64>,
    /// `None` when any held-out fit failed.
    pub score: Option<f64>,
    pub failed_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub bandwidths: Vec<f64>,
    pub cv_table: Vec<CvRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub threshold: f64,
    pub exceedances: usize,
    pub discrepancy: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub threshold: f64,
    pub dm_table: Vec<DmRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub bandwidths: Vec<f64>,
    pub threshold: f64,
    pub cv_table: Vec<CvRow>,
    pub dm_table: Vec<DmRow>,
}

/// Everything [`tune`] needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    pub kernel: KernelSpec,
    pub include_intercept: bool,
    /// Sample fraction `n0 / n` fixing the threshold used during cross-validation.
    pub cv_fraction: f64,
    pub bandwidth_candidates: Vec<Vec<f64>>,
    pub folds: usize,
    /// Candidate sample fractions for the threshold step.
    pub threshold_fractions: Vec<f64>,
    pub discrepancy: DiscrepancyVariant,
    pub seed: u64,
}

/// Default threshold candidates: quantile levels 0.70, 0.75, ..., 0.95, 0.97.
pub fn default_threshold_fractions() -> Vec<f64> {
    vec![0.30, 0.25, 0.20, 0.15, 0.10, 0.05, 0.03]
}

/// Threshold leaving `round(fraction * n)` responses above it (fewer under ties).
pub fn threshold_for_fraction(y: &[f64], fraction: f64) -> Result<f64> {
    let n = y.len();
    let k = (fraction * n as f64).round() as usize;
    if !(fraction > 0.0 && fraction < 1.0) || k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "sample fraction {fraction} leaves {k} of {n} exceedances"
        )));
    }
    let mut sorted = y.to_vec();
    sort_ascending(&mut sorted);
    Ok(sorted[n - k - 1])
}

fn geometric_mean(h: &[f64]) -> f64 {
    (h.iter().map(|v| v.ln()).sum::<f64>() / h.len().max(1) as f64).exp()
}

struct FoldOutcome {
    loss: f64,
    failures: usize,
}

/// Chooses the bandwidths minimizing the held-out likelihood loss.
///
/// Rows are shuffled once with `seed` and split into `folds` contiguous
/// blocks of `floor(n / folds)` rows; leftover rows are always used for
/// training. A candidate whose held-out fits fail anywhere is excluded. Ties
/// go to the larger bandwidth.
#[allow(clippy::too_many_arguments)]
pub fn cv_bandwidth(
    data: &Dataset,
    kernel: KernelSpec,
    include_intercept: bool,
    omega0: f64,
    candidates: &[Vec<f64>],
    folds: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<BandwidthSelection> {
    let n = data.n();
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no bandwidth candidates".into()));
    }
    if folds < 2 || n / folds < 1 {
        return Err(Error::InvalidConfig(format!("{folds} folds for {n} rows")));
    }
    let ymax = data.responses().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if omega0 >= ymax {
        return Err(Error::NoExceedances);
    }
    let configs: Vec<FitConfig> = candidates
        .iter()
        .map(|h| FitConfig::new(kernel, h.clone(), omega0, include_intercept))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let block = n / folds;
    let mut fold_of = vec![usize::MAX; n];
    for (pos, &i) in order.iter().enumerate().take(block * folds) {
        fold_of[i] = pos / block;
    }
    let splits: Vec<(Dataset, Vec<usize>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let held_out: Vec<usize> = order[f * block..(f + 1) * block]
                .iter()
                .copied()
                .filter(|&i| data.y(i) > omega0)
                .collect();
            (data.subset(&train), held_out)
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let run = |&(c, f): &(usize, usize)| -> FoldOutcome {
        let cfg = &configs[c];
        let (train, held_out) = &splits[f];
        let mut out = FoldOutcome { loss: 0.0, failures: 0 };
        let mut z = vec![0.0; cfg.design_dim(data.p())];
        for &i in held_out {
            match fit_at(train, data.t_row(i), cfg, None) {
                Ok(fit) => {
                    cfg.fill_design_row(data.x_row(i), &mut z);
                    let s: f64 = z.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
                    out.loss += s.exp() * (data.y(i) / omega0).ln() - s;
                }
                Err(_) => out.failures += 1,
            }
        }
        out
    };
    let outcomes: Vec<FoldOutcome> = match mode {
        ExecMode::Serial => jobs.iter().map(run).collect(),
        ExecMode::Parallel => jobs.par_iter().map(run).collect(),
    };

    let cv_table: Vec<CvRow> = candidates
        .iter()
        .enumerate()
        .map(|(c, h)| {
            let per_fold = &outcomes[c * folds..(c + 1) * folds];
            let failed_fits: usize = per_fold.iter().map(|o| o.failures).sum();
            let score = (failed_fits == 0).then(|| per_fold.iter().map(|o| o.loss).sum());
            CvRow {
                bandwidths: h.clone(),
                score,
                failed_fits,
            }
        })
        .collect();

    let best = cv_table
        .iter()
        .filter_map(|r| r.score.map(|s| (s, r)))
        .min_by(|(sa, ra), (sb, rb)| {
            sa.total_cmp(sb)
                .then_with(|| geometric_mean(&rb.bandwidths).total_cmp(&geometric_mean(&ra.bandwidths)))
        })
        .map(|(_, r)| r.bandwidths.clone())
        .ok_or(Error::AllCandidatesFailed)?;
    Ok(BandwidthSelection {
        bandwidths: best,
        cv_table,
    })
}

/// `exp(-score)` per exceedance, ascending: approximately standard uniform.
pub fn u_residuals(data: &Dataset, cfg: &FitConfig, mode: ExecMode) -> Result<Vec<f64>> {
    let mut u: Vec<f64> = exceedance_scores(data, cfg, mode)?
        .into_iter()
        .map(|s| (-s.score).exp())
        .collect();
    sort_ascending(&mut u);
    Ok(u)
}

/// Discrepancy of ascending residuals `u` from the uniform law.
pub fn discrepancy_of(u_sorted: &[f64], variant: DiscrepancyVariant) -> Result<f64> {
    let n0 = u_sorted.len();
    if n0 == 0 {
        return Err(Error::NoExceedances);
    }
    let m = n0 as f64;
    let total: f64 = u_sorted
        .iter()
        .enumerate()
        .map(|(idx, &u)| {
            let level = (idx + 1) as f64 / m;
            let reference = match variant {
                DiscrepancyVariant::Literal => u_sorted.partition_point(|&v| v <= level) as f64 / m,
                DiscrepancyVariant::Cvm => level,
            };
            (u - reference).powi(2)
        })
        .sum();
    Ok(total / m)
}

pub fn discrepancy(data: &Dataset, cfg: &FitConfig, variant: DiscrepancyVariant, mode: ExecMode) -> Result<f64> {
    discrepancy_of(&u_residuals(data, cfg, mode)?, variant)
}

/// Chooses the threshold with the smallest discrepancy. Ties go to the larger
/// threshold.
pub fn select_threshold(
    data: &Dataset,
    template: &FitConfig,
    omega_candidates: &[f64],
    variant: DiscrepancyVariant,
    mode: ExecMode,
) -> Result<ThresholdSelection> {
    if omega_candidates.is_empty() {
        return Err(Error::InvalidConfig("no threshold candidates".into()));
    }
    let d = template.design_dim(data.p());
    let eval = |&omega: &f64| -> DmRow {
        let exceedances = data.responses().iter().filter(|&&y| y > omega).count();
        let result = if exceedances < d + 1 {
            Err(Error::InsufficientLocalData {
                available: exceedances,
                required: d + 1,
            })
        } else {
            template
                .with_threshold(omega)
                .and_then(|cfg| discrepancy(data, &cfg, variant, mode))
        };
        DmRow {
            threshold: omega,
            exceedances,
            discrepancy: result.as_ref().ok().copied(),
            failure: result.err().map(|e| e.kind().to_string()),
        }
    };
    let dm_table: Vec<DmRow> = match mode {
        ExecMode::Serial => omega_candidates.iter().map(eval).collect(),
        ExecMode::Parallel => omega_candidates.par_iter().map(eval).collect(),
    };
    let threshold = dm_table
        .iter()
        .filter_map(|r| r.discrepancy.map(|v| (v, r.threshold)))
        .min_by(|(va, wa), (vb, wb)| va.total_cmp(vb).then_with(|| wb.total_cmp(wa)))
        .map(|(_, w)| w)
        .ok_or(Error::AllCandidatesFailed)?;
    Ok(ThresholdSelection { threshold, dm_table })
}

/// Runs both tuning steps.
pub fn tune(data: &Dataset, plan: &TuningPlan, mode: ExecMode) -> Result<TuningResult> {
    let omega0 = threshold_for_fraction(data.responses(), plan.cv_fraction)?;
    let bw = cv_bandwidth(
        data,
        plan.kernel,
        plan.include_intercept,
        omega0,
        &plan.bandwidth_candidates,
        plan.folds,
        plan.seed,
        mode,
    )?;
    let template = FitConfig::new(plan.kernel, bw.bandwidths.clone(), omega0, plan.include_intercept)?;
    let omegas: Vec<f64> = plan
        .threshold_fractions
        .iter()
        .map(|&f| threshold_for_fraction(data.responses(), f))
        .collect::<Result<_>>()?;
    let th = select_threshold(data, &template, &omegas, plan.discrepancy, mode)?;
    Ok(TuningResult {
        bandwidths: bw.bandwidths,
        threshold: th.threshold,
        cv_table: bw.cv_table,
        dm_table: th.dm_table,
    })
}
