//! Monte Carlo checks of the limit theorems against the closed-form values.
//!
//! Tolerances are four standard errors estimated from the sample itself,
//! except for the survival check, which adds a fixed allowance for the bias
//! of using "alive at `t_max`" in place of survival forever.

use serde::Serialize;

use crate::asymptotics::{excursion_mean, sigma_m_squared};
use crate::error::{SimError, ValidateError};
use crate::genfun::{extinction_matrix, survival_probability, DEFAULT_MAX_ITER};
use crate::model::{BpmeModel, TotalState};
use crate::scalar::Scalar;
use crate::simulate::{collect_excursions, monte_carlo, Mode, Sampler};

/// Standard errors allowed between statistic and target.
pub const SE_MULTIPLIER: f64 = 4.0;
/// Allowance for the alive-at-`t_max` proxy at `t_max = 10^4`.
pub const SURVIVAL_BIAS_ALLOWANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub statistic: f64,
    pub target: f64,
    pub tolerance: f64,
    pub n_samples: usize,
    pub passed: bool,
    pub seed: u64,
    pub notes: String,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, statistic: f64, target: f64, tolerance: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            statistic,
            target,
            tolerance,
            n_samples,
            passed: (statistic - target).abs() <= tolerance,
            seed,
            notes: String::new(),
        }
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }
}

/// Sample mean and unbiased sample variance, summed in input order.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let var = if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Law of large numbers: `Y_t / t` over `n` Z-valued runs against `mu - 1`,
/// then `X_t / t` over the runs whose coupled branching process is still
/// alive at `t`.
pub fn lln_check<T: Scalar>(
    model: &BpmeModel<T>,
    init: TotalState,
    t: usize,
    n: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<CheckReport>, ValidateError> {
    if t < 1_000 {
        return Err(SimError::InvalidParameter(format!("LLN check needs t >= 1000, got {t}")).into());
    }
    let ens = monte_carlo(model, init, Mode::ZValued, t, n, seed, workers)?;
    let target = model.mu().as_f64() - 1.0;
    let tf = t as f64;
    let ratios: Vec<f64> = ens.endpoint_populations.iter().map(|&y| y as f64 / tf).collect();
    let (mean, var) = mean_var(&ratios);
    let mut out = vec![CheckReport::new("lln_z_valued", mean, target, se_band(var, n), n, seed)
        .with_notes(format!("Y_t/t at t={t} from {}.{}", init.population, init.state))];
    let surv: Vec<f64> = ens.survivor_endpoints().map(|x| x as f64 / tf).collect();
    if surv.len() >= 2 {
        let (m, v) = mean_var(&surv);
        out.push(
            CheckReport::new("lln_bpme_survivors", m, target, se_band(v, surv.len()), surv.len(), seed)
                .with_notes(format!("X_t/t among {} of {n} runs alive at t={t}", surv.len())),
        );
    }
    Ok(out)
}

fn se_band(var: f64, n: usize) -> f64 {
    SE_MULTIPLIER * (var / n as f64).sqrt()
}

fn variance_band(sigma2: f64, n: usize) -> f64 {
    SE_MULTIPLIER * sigma2 * (2.0 / (n as f64 - 1.0)).sqrt()
}

/// Central limit theorem: `Z = (Y_t - Y_0 - (mu - 1) t) / sqrt(t)` over `n`
/// Z-valued runs; mean against 0, sample variance against `sigma_M^2`, and
/// the sample variance restricted to runs whose branching process survives
/// to `t` against the same target.
pub fn clt_check<T: Scalar>(
    model: &BpmeModel<T>,
    init: TotalState,
    t: usize,
    n: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<CheckReport>, ValidateError> {
    let sigma2_m = sigma_m_squared(model)?.sigma2_m.as_f64();
    if sigma2_m <= 1e-12 {
        return Err(ValidateError::DegenerateVariance(sigma2_m));
    }
    if t < 10_000 {
        return Err(SimError::InvalidParameter(format!("CLT check needs t >= 10000, got {t}")).into());
    }
    if n < 2 {
        return Err(SimError::InvalidParameter("CLT check needs at least 2 samples".into()).into());
    }
    let ens = monte_carlo(model, init, Mode::ZValued, t, n, seed, workers)?;
    let drift = model.mu().as_f64() - 1.0;
    let tf = t as f64;
    let y0 = init.population as f64;
    let z = |y: i64| (y as f64 - y0 - drift * tf) / tf.sqrt();
    let zs: Vec<f64> = ens.endpoint_populations.iter().map(|&y| z(y)).collect();
    let (mean, var) = mean_var(&zs);
    let mut out = vec![
        CheckReport::new("clt_mean", mean, 0.0, SE_MULTIPLIER * sigma2_m.sqrt() / (n as f64).sqrt(), n, seed),
        CheckReport::new("clt_variance", var, sigma2_m, variance_band(sigma2_m, n), n, seed),
    ];
    let surv: Vec<f64> = ens.survivor_endpoints().map(z).collect();
    if surv.len() >= 2 {
        let (_, sv) = mean_var(&surv);
        out.push(
            CheckReport::new("clt_survivor_variance", sv, sigma2_m, variance_band(sigma2_m, surv.len()), surv.len(), seed)
                .with_notes(format!("{} of {n} runs alive at t={t}", surv.len())),
        );
    }
    Ok(out)
}

/// Fraction of branching-process runs from `n.i` alive at `t_max` against
/// one minus row `i` of `E^n`.
pub fn survival_mc_vs_analytic<T: Scalar>(
    model: &BpmeModel<T>,
    n: usize,
    i: usize,
    t_max: usize,
    samples: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<CheckReport, ValidateError> {
    let ext = extinction_matrix(model, T::exact_tol(), DEFAULT_MAX_ITER);
    let p = survival_probability(&ext, n, i)?.as_f64();
    let ens = monte_carlo(model, TotalState::new(n as i64, i), Mode::Bpme, t_max, samples, seed, workers)?;
    let tol = SE_MULTIPLIER * (p * (1.0 - p) / samples as f64).sqrt() + SURVIVAL_BIAS_ALLOWANCE;
    Ok(CheckReport::new(format!("survival_{n}.{i}"), ens.survivor_fraction(), p, tol, samples, seed)
        .with_notes(format!("alive at t_max={t_max}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCheck {
    pub report: CheckReport,
    /// Empirical `Var(Delta)`.
    pub delta_variance: f64,
}

/// Mean net gain over `count` consecutive excursions from `i` of one long
/// Z-valued run, against `(mu - 1) / pi_i`.
pub fn delta_mean_check<T: Scalar>(model: &BpmeModel<T>, i: usize, count: usize, seed: u64) -> Result<DeltaCheck, ValidateError> {
    if count < 1_000 {
        return Err(SimError::InvalidParameter(format!("need at least 1000 excursions, got {count}")).into());
    }
    let stats = collect_excursions(&Sampler::new(model), i, count, seed)?;
    let deltas: Vec<f64> = stats.deltas.iter().map(|&d| d as f64).collect();
    let (mean, var) = mean_var(&deltas);
    let durations: Vec<f64> = stats.durations.iter().map(|&d| d as f64).collect();
    let (mean_tau, _) = mean_var(&durations);
    let report = CheckReport::new(format!("delta_mean.{i}"), mean, excursion_mean(model, i).as_f64(), se_band(var, count), count, seed)
        .with_notes(format!("empirical Var(Delta)={var}, mean return time={mean_tau}"));
    Ok(DeltaCheck { report, delta_variance: var })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub t_max: usize,
    pub samples: usize,
    pub seed: u64,
    pub init_population: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { t_max: 10_000, samples: 10_000, seed: 0, init_population: 2 }
    }
}

/// The default battery: excursion means per state, LLN and CLT from
/// `init_population.0`, survival from `1.i` and `init_population.i` for
/// every state. Checks whose preconditions fail are listed in the second
/// element instead of run.
///
/// The LLN check runs `samples / 10` trajectories to `10 t_max`: the same
/// work and the same band (its width scales as `1 / sqrt(t N)`), but the
/// `O(1/t)` bias of `Y_t / t` from the initial population and the
/// environment transient shrinks tenfold.
pub fn default_suite<T: Scalar>(
    model: &BpmeModel<T>,
    cfg: SuiteConfig,
    workers: Option<usize>,
) -> Result<(Vec<CheckReport>, Vec<String>), ValidateError> {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..model.num_states() {
        reports.push(delta_mean_check(model, i, cfg.samples.max(1_000), cfg.seed)?.report);
    }
    let init = TotalState::new(cfg.init_population as i64, 0);
    let (lln_t, lln_n) = (cfg.t_max.saturating_mul(10), (cfg.samples / 10).max(2));
    if cfg.t_max >= 1_000 {
        reports.extend(lln_check(model, init, lln_t, lln_n, cfg.seed, workers)?);
    } else {
        skipped.push(format!("lln: t_max={} below 1000", cfg.t_max));
    }
    match clt_check(model, init, cfg.t_max, cfg.samples, cfg.seed, workers) {
        Ok(r) => reports.extend(r),
        Err(e @ ValidateError::DegenerateVariance(_)) => skipped.push(format!("clt: {e}")),
        Err(ValidateError::Sim(SimError::InvalidParameter(msg))) => skipped.push(format!("clt: {msg}")),
        Err(e) => return Err(e),
    }
    let mut pops = vec![1usize];
    if cfg.init_population as usize > 1 {
        pops.push(cfg.init_population as usize);
    }
    for &n in &pops {
        for i in 0..model.num_states() {
            reports.push(survival_mc_vs_analytic(model, n, i, cfg.t_max, cfg.samples, cfg.seed, workers)?);
        }
    }
    Ok((reports, skipped))
}
