//! The defect functional of a bilateral path, its stabilized limit, and
//! the first and second drift derivatives in a perturbation direction,
//! with finite-difference cross-validation.

use crate::error::{Error, Result};
use crate::group::{GroupModel, Syllable, Word};
use crate::measure::{check_nonelementary, PerturbationFamily, ProbabilityMeasure, SignedMeasure};
use crate::stats;
use crate::walk::{estimate_drift, monte_carlo_mean, EstimatorResult, SamplePath};
use rayon::prelude::*;
use serde::Serialize;

/// ‖g₁‖ + ‖g₂‖ + ‖g₃‖ − ‖g₁g₂g₃‖ (nonnegative by the triangle inequality).
pub fn trilinear_defect(model: &GroupModel, g1: &Word, g2: &Word, g3: &Word) -> Result<f64> {
    let prod = model.multiply(&model.multiply(g1, g2)?, g3)?;
    Ok((model.norm(g1)? + model.norm(g2)? + model.norm(g3)?) as f64 - model.norm(&prod)? as f64)
}

/// The defect of splitting the segment g₋ₘ⋯gₙ at the distinguished step
/// g₀: ‖g₋ₘ⋯g₋₁‖ + ‖g₀‖ + ‖g₁⋯gₙ‖ − ‖g₋ₘ⋯gₙ‖.
pub fn defect_r(path: &SamplePath, n: i64, m: i64) -> Result<f64> {
    if n < 0 || m < 0 || n > path.n() || m > path.m() {
        return Err(Error::Range(format!(
            "defect grid point ({n}, {m}) outside path extents ({}, {})",
            path.n(),
            path.m()
        )));
    }
    let model = path.model();
    // Z₋₍ₘ₊₁₎⁻¹ Z₋₁ = g₋ₘ⋯g₋₁ and Z₋₍ₘ₊₁₎⁻¹ Zₙ = g₋ₘ⋯gₙ; Z₋₁ = g₀⁻¹.
    let z_neg = path.z(-(m + 1)).unwrap();
    let z1 = path.z(-1).unwrap();
    let zn = path.z(n).unwrap();
    let z_neg_inv = model.inverse(z_neg)?;
    let left = model.multiply(&z_neg_inv, z1)?;
    let whole = model.multiply(&z_neg_inv, zn)?;
    Ok((model.norm(&left)? + model.norm(z1)? + model.norm(zn)?) as f64
        - model.norm(&whole)? as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct DefectSample {
    pub n_max: i64,
    pub m_max: i64,
    /// table[m-1][n-1] = R_{n,m} for n in 1..=n_max, m in 1..=m_max
    pub table: Vec<Vec<f64>>,
    /// smallest k with R_{n,m} constant over the grid for all n, m >= k
    pub k_star: Option<i64>,
    pub limit: Option<f64>,
}

/// Full defect table over a grid plus the stabilization index.
pub fn defect_limit(path: &SamplePath, n_max: i64, m_max: i64) -> Result<DefectSample> {
    if n_max < 1 || m_max < 1 {
        return Err(Error::InvalidInput("grid extents must be >= 1".into()));
    }
    let mut table = Vec::with_capacity(m_max as usize);
    for m in 1..=m_max {
        let mut row = Vec::with_capacity(n_max as usize);
        for n in 1..=n_max {
            row.push(defect_r(path, n, m)?);
        }
        table.push(row);
    }
    let corner = table[m_max as usize - 1][n_max as usize - 1];
    let stable_from = |k: i64| -> bool {
        for m in k..=m_max {
            for n in k..=n_max {
                if table[m as usize - 1][n as usize - 1] != corner {
                    return false;
                }
            }
        }
        true
    };
    let k_star = (1..=n_max.min(m_max)).find(|&k| stable_from(k));
    Ok(DefectSample {
        n_max,
        m_max,
        table,
        limit: k_star.map(|_| corner),
        k_star,
    })
}

/// Product of `len` independent draws from μ, on the substream identified
/// by (seed, trajectory, lane). Distinct lanes are independent.
fn sample_product(mu: &ProbabilityMeasure, len: i64, seed: u64, trajectory: u64, lane: u64) -> Word {
    sample_product_ordered(mu, len, seed, trajectory, lane, false)
}

/// With `reversed`, the step drawn at index i is multiplied on the left
/// instead of the right. The product has the same law (the steps are
/// i.i.d.), but under a shared substream the reduced suffix of the result
/// stabilizes as `len` grows, instead of the prefix.
fn sample_product_ordered(
    mu: &ProbabilityMeasure,
    len: i64,
    seed: u64,
    trajectory: u64,
    lane: u64,
    reversed: bool,
) -> Word {
    let model = mu.model();
    let steps: Box<dyn Iterator<Item = i64>> = if reversed {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    if model.is_surface() {
        let mut z = model.identity();
        for i in steps {
            let mut rng = stats::rng_for(seed, trajectory, (lane << 40) | i as u64);
            z = model.multiply(&z, mu.sample(&mut rng)).unwrap();
        }
        return z;
    }
    let mut buf: Vec<Syllable> = Vec::new();
    for i in steps {
        let mut rng = stats::rng_for(seed, trajectory, (lane << 40) | i as u64);
        model.append_reduced(&mut buf, mu.sample(&mut rng));
    }
    model.normalize(buf).unwrap()
}

/// Monte Carlo estimate of E[R_{n,m}] with the middle step g₀ held fixed.
pub fn expected_defect(
    mu_left: &ProbabilityMeasure,
    g0: &Word,
    mu_right: &ProbabilityMeasure,
    n: i64,
    m: i64,
    trials: u64,
    seed: u64,
) -> Result<EstimatorResult> {
    if trials < 1 || n < 0 || m < 0 {
        return Err(Error::InvalidInput("need trials >= 1 and n, m >= 0".into()));
    }
    let model = mu_right.model().clone();
    model.check_owned(g0)?;
    if mu_left.model().id() != model.id() {
        return Err(Error::ModelMismatch);
    }
    let g0_norm = model.norm(g0)? as f64;
    Ok(monte_carlo_mean(trials, seed, |t| {
        let left = sample_product(mu_left, m, seed, t, 0);
        let right = sample_product(mu_right, n, seed, t, 1);
        let whole = model
            .multiply(&model.multiply(&left, g0).unwrap(), &right)
            .unwrap();
        (model.norm(&left).unwrap() + model.norm(&right).unwrap()) as f64 + g0_norm
            - model.norm(&whole).unwrap() as f64
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    Sigma1,
    Sigma1General,
    Sigma2,
    FiniteDifference,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub std_error: f64,
    /// truncation level actually certified for the requested tolerance
    pub truncation: i64,
    pub tail_bound: f64,
    pub method: DerivativeMethod,
    /// fitted exponential decay rate of the truncation error, if resolved
    pub decay_rate: Option<f64>,
    /// (level, partial value, std error) rows behind the fit
    pub ladder: Vec<(i64, f64, f64)>,
}

/// E_{μ^{∗N} × η × μ^{∗N}} of the trilinear defect, summing exactly over
/// the signed weights of η and sampling the outer factors.
fn trilinear_expectation(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    n: i64,
    trials: u64,
    seed: u64,
) -> EstimatorResult {
    let model = mu.model().clone();
    let support: Vec<(Word, f64, f64)> = eta
        .weights()
        .iter()
        .map(|(w, &c)| (w.clone(), c, model.norm(w).unwrap() as f64))
        .collect();
    monte_carlo_mean(trials, seed, |t| {
        // g1 reversed so that under the shared rung substream its reduced
        // suffix (the junction with g2) freezes as n grows.
        let g1 = sample_product_ordered(mu, n, seed, t, 0, true);
        let g3 = sample_product(mu, n, seed, t, 1);
        let base = (model.norm(&g1).unwrap() + model.norm(&g3).unwrap()) as f64;
        let mut acc = 0.0;
        for (g2, c, g2_norm) in &support {
            let prod = model
                .multiply(&model.multiply(&g1, g2).unwrap(), &g3)
                .unwrap();
            acc += c * (base + g2_norm - model.norm(&prod).unwrap() as f64);
        }
        acc
    })
}

/// Coupled truncation ladder for the first-derivative estimator: for each
/// requested level N, the mean and standard error of the per-path difference
/// between the trilinear defect at level N and at `reference`, using common
/// random numbers (the same step draws at every level). |σ₁(N) − σ₁(ref)|
/// equals |mean| of the returned row, with far less variance than two
/// independent estimates would give.
pub fn truncation_ladder(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    levels: &[i64],
    reference: i64,
    trials: u64,
    seed: u64,
) -> Result<Vec<(i64, f64, f64)>> {
    if trials < 2 || levels.is_empty() || levels.iter().any(|&n| n < 1 || n > reference) {
        return Err(Error::InvalidInput(
            "need trials >= 2 and 1 <= level <= reference".into(),
        ));
    }
    if mu.model().id() != eta.model().id() {
        return Err(Error::ModelMismatch);
    }
    let diffs: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let last = trilinear_single(mu, eta, reference, seed, t);
            levels
                .iter()
                .map(|&n| trilinear_single(mu, eta, n, seed, t) - last)
                .collect()
        })
        .collect();
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let col: Vec<f64> = diffs.iter().map(|row| row[i]).collect();
            let (mean, se) = stats::mean_se(&col);
            (n, mean, se)
        })
        .collect())
}

fn trilinear_single(mu: &ProbabilityMeasure, eta: &SignedMeasure, n: i64, seed: u64, t: u64) -> f64 {
    let model = mu.model().clone();
    let g1 = sample_product_ordered(mu, n, seed, t, 0, true);
    let g3 = sample_product(mu, n, seed, t, 1);
    let base = (model.norm(&g1).unwrap() + model.norm(&g3).unwrap()) as f64;
    let mut acc = 0.0;
    for (g2, &c) in eta.weights() {
        let g2_norm = model.norm(g2).unwrap() as f64;
        let prod = model.multiply(&model.multiply(&g1, g2).unwrap(), &g3).unwrap();
        acc += c * (base + g2_norm - model.norm(&prod).unwrap() as f64);
    }
    acc
}

pub const SIGMA1_LADDER: [i64; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const SIGMA1_DEFAULT_TRIALS: u64 = 4000;

/// First derivative of the escape rate in direction η: E_η‖g‖ minus the
/// limiting trilinear defect expectation, truncated where the fitted
/// exponential tail falls below eps0.
pub fn sigma1(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    eps0: f64,
    trials: u64,
    seed: u64,
) -> Result<DerivativeEstimate> {
    if eps0 <= 0.0 || trials < 2 {
        return Err(Error::InvalidInput("need eps0 > 0 and trials >= 2".into()));
    }
    if mu.model().id() != eta.model().id() {
        return Err(Error::ModelMismatch);
    }
    if check_nonelementary(mu, 2)?.is_none() {
        return Err(Error::HypothesisRejected(
            "no independence witness found in the support semigroup of the base measure".into(),
        ));
    }
    if eta.support_size() == 0 {
        return Ok(DerivativeEstimate {
            value: 0.0,
            std_error: 0.0,
            truncation: 0,
            tail_bound: 0.0,
            method: DerivativeMethod::Sigma1,
            decay_rate: None,
            ladder: Vec::new(),
        });
    }
    // One shared substream for every rung: step draws are keyed by
    // (seed, trial, step), so the level-N products are prefixes of the
    // level-2N products and the rung differences isolate truncation error.
    let mut ladder = Vec::with_capacity(SIGMA1_LADDER.len());
    for &n in SIGMA1_LADDER.iter() {
        let est = trilinear_expectation(mu, eta, n, trials, seed);
        ladder.push((n, est.value, est.std_error));
    }
    let (n_last, t_last, se_last) = *ladder.last().unwrap();
    // fit log |T(N) - T(N_max)| against N on the resolved rungs
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(n, t, se) in &ladder[..ladder.len() - 1] {
        let diff = (t - t_last).abs();
        if diff > 3.0 * se.hypot(se_last) {
            xs.push(n as f64);
            ys.push(diff.ln());
        }
    }
    let (decay_rate, tail_bound, truncation) = if xs.len() >= 2 {
        let (slope, intercept, _r2) = stats::linear_fit(&xs, &ys);
        if slope < 0.0 {
            let n_eps = ((eps0.ln() - intercept) / slope).ceil().max(1.0) as i64;
            (Some(slope), (intercept + slope * n_last as f64).exp(), n_eps.min(n_last))
        } else {
            (None, ys.iter().copied().fold(f64::MIN, f64::max).exp(), n_last)
        }
    } else {
        // truncation error never rose above noise: converged immediately
        (None, 0.0, ladder[0].0)
    };
    Ok(DerivativeEstimate {
        value: eta.first_moment() - t_last,
        std_error: se_last,
        truncation,
        tail_bound,
        method: DerivativeMethod::Sigma1,
        decay_rate,
        ladder,
    })
}

/// Cesàro-average form of the first derivative, exact by convolution:
/// (1/n) Σ_{i=1}^{n} E_{μ^{∗(i−1)} ∗ η ∗ μ^{∗(n−i)}} ‖g‖. Requires the
/// direction to be balanced and supported inside the base support.
pub fn sigma1_general(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    n: usize,
    cap: usize,
) -> Result<DerivativeEstimate> {
    if n < 1 {
        return Err(Error::InvalidInput("need n >= 1".into()));
    }
    if mu.model().id() != eta.model().id() {
        return Err(Error::ModelMismatch);
    }
    if !eta.is_balanced() {
        return Err(Error::HypothesisRejected(
            "direction measure is not balanced (total mass must vanish)".into(),
        ));
    }
    if !eta.support().all(|g| mu.weights().contains_key(g)) {
        return Err(Error::HypothesisRejected(
            "direction support is not contained in the base support".into(),
        ));
    }
    // powers[k] = μ^{∗k}, k = 0..n-1
    let mut powers: Vec<SignedMeasure> = Vec::with_capacity(n);
    powers.push(SignedMeasure::delta(mu.model().clone(), mu.model().identity())?);
    for _ in 1..n {
        let next = powers.last().unwrap().convolve_capped(mu.as_signed(), cap)?;
        powers.push(next);
    }
    let mut terms = Vec::with_capacity(n);
    for i in 1..=n {
        let mid = powers[i - 1].convolve_capped(eta, cap)?;
        let full = mid.convolve_capped(&powers[n - i], cap)?;
        terms.push((i as i64, full.first_moment(), 0.0));
    }
    let value = terms.iter().map(|&(_, v, _)| v).sum::<f64>() / n as f64;
    Ok(DerivativeEstimate {
        value,
        std_error: 0.0,
        truncation: n as i64,
        tail_bound: 0.0,
        method: DerivativeMethod::Sigma1General,
        decay_rate: None,
        ladder: terms,
    })
}

/// E over (g₁ ~ μ^{∗N}, g₂ from η exactly, g₃ ~ μ^{∗(i−1)} ∗ η ∗ μ^{∗(N−i)})
/// of the trilinear defect; `left_insert` mirrors the roles of g₁ and g₃.
fn crossed_expectation(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    n: i64,
    i: i64,
    left_insert: bool,
    trials: u64,
    seed: u64,
) -> EstimatorResult {
    let model = mu.model().clone();
    let support: Vec<(Word, f64, f64)> = eta
        .weights()
        .iter()
        .map(|(w, &c)| (w.clone(), c, model.norm(w).unwrap() as f64))
        .collect();
    monte_carlo_mean(trials, seed, |t| {
        let plain = sample_product(mu, n, seed, t, 0);
        let pre = sample_product(mu, if left_insert { n - i } else { i - 1 }, seed, t, 1);
        let post = sample_product(mu, if left_insert { i - 1 } else { n - i }, seed, t, 2);
        let mut acc = 0.0;
        for (h, ch, _) in &support {
            let inserted = model
                .multiply(&model.multiply(&pre, h).unwrap(), &post)
                .unwrap();
            let (g1, g3) = if left_insert { (&inserted, &plain) } else { (&plain, &inserted) };
            let base = (model.norm(g1).unwrap() + model.norm(g3).unwrap()) as f64;
            for (g2, c2, g2_norm) in &support {
                let prod = model
                    .multiply(&model.multiply(g1, g2).unwrap(), g3)
                    .unwrap();
                acc += ch * c2 * (base + g2_norm - model.norm(&prod).unwrap() as f64);
            }
        }
        acc
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Sigma2Report {
    pub estimate: DerivativeEstimate,
    /// per-i magnitudes of the two crossed sums, for decay inspection
    pub summands: Vec<(i64, f64, f64)>,
    pub tail_ratio: Option<f64>,
}

/// Second derivative of the escape rate: the η′ term minus the two
/// crossed sums over insertion positions, truncated at i_max with a
/// geometric tail fitted to the last computed summands.
pub fn sigma2(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    eta_prime: &SignedMeasure,
    n: i64,
    i_max: i64,
    trials: u64,
    seed: u64,
) -> Result<Sigma2Report> {
    if n < 1 || i_max < 1 || i_max > n {
        return Err(Error::InvalidInput("need 1 <= i_max <= n".into()));
    }
    if mu.model().id() != eta.model().id() || mu.model().id() != eta_prime.model().id() {
        return Err(Error::ModelMismatch);
    }
    if check_nonelementary(mu, 2)?.is_none() {
        return Err(Error::HypothesisRejected(
            "no independence witness found in the support semigroup of the base measure".into(),
        ));
    }
    if eta.support_size() == 0 && eta_prime.support_size() == 0 {
        return Ok(Sigma2Report {
            estimate: DerivativeEstimate {
                value: 0.0,
                std_error: 0.0,
                truncation: 0,
                tail_bound: 0.0,
                method: DerivativeMethod::Sigma2,
                decay_rate: None,
                ladder: Vec::new(),
            },
            summands: Vec::new(),
            tail_ratio: None,
        });
    }
    let mut value = eta_prime.first_moment();
    let mut var = 0.0;
    if eta_prime.support_size() > 0 {
        let main = trilinear_expectation(mu, eta_prime, n, trials, stats::substream_seed(seed, 0, 0));
        value -= main.value;
        var += main.std_error * main.std_error;
    }
    let mut summands = Vec::new();
    if eta.support_size() > 0 {
        for i in 1..=i_max {
            let right =
                crossed_expectation(mu, eta, n, i, false, trials, stats::substream_seed(seed, i as u64, 1));
            let left =
                crossed_expectation(mu, eta, n, i, true, trials, stats::substream_seed(seed, i as u64, 2));
            value -= right.value + left.value;
            var += right.std_error * right.std_error + left.std_error * left.std_error;
            summands.push((i, right.value, left.value));
        }
    }
    // geometric tail from the last computed summand magnitudes
    let mags: Vec<f64> = summands
        .iter()
        .map(|&(_, r, l)| r.abs() + l.abs())
        .collect();
    let fit_window = mags.len().min(5);
    let (tail_bound, decay_rate, tail_ratio) = if fit_window >= 2 {
        let xs: Vec<f64> = (mags.len() - fit_window..mags.len())
            .map(|j| (j + 1) as f64)
            .collect();
        let ys: Vec<f64> = mags[mags.len() - fit_window..]
            .iter()
            .map(|&v| v.max(1e-300).ln())
            .collect();
        let (slope, intercept, _) = stats::linear_fit(&xs, &ys);
        if slope < 0.0 {
            let r = slope.exp();
            let next = (intercept + slope * (i_max + 1) as f64).exp();
            (next / (1.0 - r), Some(slope), Some(r))
        } else {
            (mags.last().copied().unwrap_or(0.0), None, None)
        }
    } else {
        (0.0, None, None)
    };
    Ok(Sigma2Report {
        estimate: DerivativeEstimate {
            value,
            std_error: var.sqrt(),
            truncation: i_max,
            tail_bound,
            method: DerivativeMethod::Sigma2,
            decay_rate,
            ladder: summands.iter().map(|&(i, r, l)| (i, r + l, 0.0)).collect(),
        },
        summands,
        tail_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FdWhat {
    First,
    Second,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub t: f64,
    pub trials: u64,
    pub drift_plus: f64,
    pub se_plus: f64,
    pub drift_minus: f64,
    pub se_minus: f64,
    /// central-difference slope or curvature at this step size
    pub estimate: f64,
    pub std_error: f64,
    /// |l(μ_t) − l(μ)| / ‖tη‖_{0,1}
    pub lipschitz_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub what: FdWhat,
    pub rows: Vec<FdRow>,
    /// Richardson-extrapolated values from consecutive halved steps
    pub richardson: Vec<f64>,
    pub extrapolated: Option<f64>,
    pub extrapolated_se: Option<f64>,
    pub base_drift: f64,
    pub base_se: f64,
    pub direction_norm: f64,
}

pub const FD_DEFAULT_T_LIST: [f64; 4] = [0.08, 0.04, 0.02, 0.01];

/// Finite-difference slopes (or curvatures) of the escape rate along a
/// perturbation family, with per-step Lipschitz ratios. Trial counts scale
/// like 1/t² so the difference quotients keep comparable standard errors.
pub fn fd_check(
    mu: &ProbabilityMeasure,
    eta: &SignedMeasure,
    t_list: &[f64],
    what: FdWhat,
    n: i64,
    base_trials: u64,
    seed: u64,
) -> Result<FdReport> {
    if t_list.is_empty() || base_trials < 1 || n < 1 {
        return Err(Error::InvalidInput("need a nonempty t list, trials >= 1, n >= 1".into()));
    }
    let t_max = t_list.iter().cloned().fold(0.0f64, f64::max);
    let family = PerturbationFamily::new(mu.clone(), eta.clone(), t_max)?;
    let direction_norm = eta.norm_zero_one();
    let base = estimate_drift(mu, n, (base_trials as f64 / (t_list[t_list.len() - 1].powi(2))).ceil() as u64, stats::substream_seed(seed, u64::MAX, 0))?;
    let mut rows = Vec::with_capacity(t_list.len());
    for (idx, &t) in t_list.iter().enumerate() {
        if t <= 0.0 {
            return Err(Error::InvalidInput("step sizes must be positive".into()));
        }
        let trials = (base_trials as f64 / (t * t)).ceil() as u64;
        // common random numbers across the two arms: the difference
        // quotient only sees the eta-shifted mass, and a zero direction
        // yields exactly zero; the hypot error bar below is conservative
        let arm_seed = stats::substream_seed(seed, idx as u64, 1);
        let plus = estimate_drift(&family.perturb(t)?, n, trials, arm_seed)?;
        let minus = estimate_drift(&family.perturb(-t)?, n, trials, arm_seed)?;
        let (estimate, std_error) = match what {
            FdWhat::First => (
                (plus.value - minus.value) / (2.0 * t),
                plus.std_error.hypot(minus.std_error) / (2.0 * t),
            ),
            FdWhat::Second => (
                (plus.value - 2.0 * base.value + minus.value) / (t * t),
                (plus.std_error.hypot(minus.std_error)).hypot(2.0 * base.std_error) / (t * t),
            ),
        };
        let lipschitz_ratio = if direction_norm > 0.0 {
            (plus.value - base.value).abs() / (t * direction_norm)
        } else {
            0.0
        };
        rows.push(FdRow {
            t,
            trials,
            drift_plus: plus.value,
            se_plus: plus.std_error,
            drift_minus: minus.value,
            se_minus: minus.std_error,
            estimate,
            std_error,
            lipschitz_ratio,
        });
    }
    // central differences carry O(t²) error, so halving the step admits
    // the classical (4·s(t/2) − s(t)) / 3 elimination
    let mut richardson = Vec::new();
    for w in rows.windows(2) {
        if (w[0].t - 2.0 * w[1].t).abs() < 1e-12 {
            richardson.push((4.0 * w[1].estimate - w[0].estimate) / 3.0);
        }
    }
    let extrapolated = richardson.last().copied();
    let extrapolated_se = if richardson.is_empty() {
        None
    } else {
        let last = &rows[rows.len() - 1];
        let prev = &rows[rows.len() - 2];
        Some((4.0 * last.std_error).hypot(prev.std_error) / 3.0)
    };
    Ok(FdReport {
        what,
        rows,
        richardson,
        extrapolated,
        extrapolated_se,
        base_drift: base.value,
        base_se: base.std_error,
        direction_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::{sample_path, MeasureAssignment};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn f2() -> Arc<GroupModel> {
        GroupModel::free(2).unwrap()
    }

    fn path_from(model: &Arc<GroupModel>, steps: &[(i64, &str)]) -> SamplePath {
        let map: BTreeMap<i64, Word> = steps
            .iter()
            .map(|&(i, s)| (i, model.parse(s).unwrap()))
            .collect();
        SamplePath::from_steps(model.clone(), map, 0).unwrap()
    }

    #[test]
    fn defect_matches_hand_computations() {
        let m = f2();
        // backtracking middle step: 1 + 1 + 1 - 1 = 2
        let p = path_from(&m, &[(-1, "a"), (0, "A"), (1, "a")]);
        assert_eq!(defect_r(&p, 1, 1).unwrap(), 2.0);
        // no cancellation: 1 + 1 + 1 - 3 = 0
        let p = path_from(&m, &[(-1, "a"), (0, "b"), (1, "a")]);
        assert_eq!(defect_r(&p, 1, 1).unwrap(), 0.0);
        // identity steps
        let p = path_from(&m, &[(-1, "e"), (0, "e"), (1, "e")]);
        assert_eq!(defect_r(&p, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn defect_limit_collinear_and_stabilized() {
        let m = f2();
        let p = path_from(
            &m,
            &[(-3, "a"), (-2, "a"), (-1, "a"), (0, "a"), (1, "a"), (2, "a"), (3, "a")],
        );
        let s = defect_limit(&p, 3, 3).unwrap();
        assert!(s.table.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(s.k_star, Some(1));
        assert_eq!(s.limit, Some(0.0));

        // g0 = a^{-2} inside an a-stream: a^m a^{-2} a^n = a^{m+n-2}, so
        // R_{n,m} = m + 2 + n - (m + n - 2) = 4 for every n, m >= 1
        let p = path_from(
            &m,
            &[(-3, "a"), (-2, "a"), (-1, "a"), (0, "AA"), (1, "a"), (2, "a"), (3, "a")],
        );
        let s = defect_limit(&p, 3, 3).unwrap();
        assert_eq!(s.table[0][0], 4.0);
        assert_eq!(s.k_star, Some(1));
        assert_eq!(s.limit, Some(4.0));
    }

    #[test]
    fn defect_is_nonnegative_and_bounded_on_random_paths() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let assign = MeasureAssignment::uniform(mu);
        for traj in 0..50 {
            let p = sample_path(&assign, 8, 8, 99, traj).unwrap();
            let step_norm_sum: f64 = (-8..=8)
                .map(|i| m.norm(p.step(i).unwrap()).unwrap() as f64)
                .sum();
            for n in 1..=8 {
                for mm in 1..=8 {
                    let r = defect_r(&p, n, mm).unwrap();
                    assert!(r >= 0.0);
                    assert!(r <= 2.0 * step_norm_sum);
                }
            }
        }
    }

    #[test]
    fn expected_defect_matches_exhaustive_enumeration() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let g0 = m.parse("a").unwrap();
        // exact value by enumerating all 4^4 two-step products on each side
        let gens: Vec<Word> = ["a", "A", "b", "B"].iter().map(|s| m.parse(s).unwrap()).collect();
        let mut total = 0.0;
        let mut count = 0.0;
        for l1 in &gens {
            for l2 in &gens {
                for r1 in &gens {
                    for r2 in &gens {
                        let left = m.multiply(l1, l2).unwrap();
                        let right = m.multiply(r1, r2).unwrap();
                        let whole = m.multiply(&m.multiply(&left, &g0).unwrap(), &right).unwrap();
                        total += (m.norm(&left).unwrap()
                            + m.norm(&g0).unwrap()
                            + m.norm(&right).unwrap()) as f64
                            - m.norm(&whole).unwrap() as f64;
                        count += 1.0;
                    }
                }
            }
        }
        let exact = total / count;
        let est = expected_defect(&mu, &g0, &mu, 2, 2, 40_000, 7).unwrap();
        assert!(
            (est.value - exact).abs() <= 3.0 * est.std_error,
            "exact {exact}, estimate {} ± {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn sigma1_zero_direction_and_symmetry() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let zero = SignedMeasure::zero(m.clone());
        let est = sigma1(&mu, &zero, 1e-3, 100, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);

        // the a <-> b swap is a graph automorphism, so this direction
        // cannot move the escape rate to first order
        let eta = SignedMeasure::from_entries(
            m.clone(),
            vec![
                (m.parse("a").unwrap(), 1.0),
                (m.parse("A").unwrap(), 1.0),
                (m.parse("b").unwrap(), -1.0),
                (m.parse("B").unwrap(), -1.0),
            ],
        )
        .unwrap();
        let est = sigma1(&mu, &eta, 1e-3, 4000, 11).unwrap();
        assert!(
            est.value.abs() <= 3.0 * est.std_error.max(1e-3),
            "symmetric direction gave {} ± {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn sigma1_rejects_elementary_base() {
        let m = f2();
        let mu = ProbabilityMeasure::from_entries(
            m.clone(),
            vec![(m.parse("a").unwrap(), 0.5), (m.parse("A").unwrap(), 0.5)],
        )
        .unwrap();
        let eta = SignedMeasure::zero(m.clone());
        assert!(matches!(
            sigma1(&mu, &eta, 1e-3, 10, 0),
            Err(Error::HypothesisRejected(_))
        ));
    }

    #[test]
    fn sigma1_general_small_cases() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let eta = SignedMeasure::from_entries(
            m.clone(),
            vec![
                (m.parse("a").unwrap(), 0.5),
                (m.parse("A").unwrap(), 0.5),
                (m.parse("b").unwrap(), -0.5),
                (m.parse("B").unwrap(), -0.5),
            ],
        )
        .unwrap();
        // n = 1 reduces to the direction's first moment
        let est = sigma1_general(&mu, &eta, 1, 1 << 22).unwrap();
        assert!((est.value - eta.first_moment()).abs() < 1e-12);
        // zero direction
        let zero = SignedMeasure::zero(m.clone());
        let est = sigma1_general(&mu, &zero, 4, 1 << 22).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn sigma1_general_gates() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        // unbalanced direction
        let eta = SignedMeasure::delta(m.clone(), m.parse("a").unwrap()).unwrap();
        assert!(matches!(
            sigma1_general(&mu, &eta, 2, 1 << 20),
            Err(Error::HypothesisRejected(_))
        ));
        // support outside the base support
        let eta = SignedMeasure::from_entries(
            m.clone(),
            vec![(m.parse("aa").unwrap(), 1.0), (m.parse("a").unwrap(), -1.0)],
        )
        .unwrap();
        assert!(matches!(
            sigma1_general(&mu, &eta, 2, 1 << 20),
            Err(Error::HypothesisRejected(_))
        ));
    }

    #[test]
    fn sigma2_zero_directions() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let zero = SignedMeasure::zero(m.clone());
        let rep = sigma2(&mu, &zero, &zero, 8, 4, 100, 3).unwrap();
        assert_eq!(rep.estimate.value, 0.0);
        assert_eq!(rep.estimate.std_error, 0.0);
    }

    #[test]
    fn fd_symmetric_direction_slopes_vanish() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let eta = SignedMeasure::from_entries(
            m.clone(),
            vec![
                (m.parse("a").unwrap(), 1.0),
                (m.parse("A").unwrap(), 1.0),
                (m.parse("b").unwrap(), -1.0),
                (m.parse("B").unwrap(), -1.0),
            ],
        )
        .unwrap();
        let rep = fd_check(&mu, &eta, &[0.08, 0.04], FdWhat::First, 400, 1, 5).unwrap();
        for row in &rep.rows {
            assert!(
                row.estimate.abs() <= 3.5 * row.std_error,
                "t = {}: slope {} ± {}",
                row.t,
                row.estimate,
                row.std_error
            );
        }
    }

    #[test]
    fn fd_zero_direction_is_flat() {
        let m = f2();
        let mu = ProbabilityMeasure::srw(m.clone()).unwrap();
        let zero = SignedMeasure::zero(m.clone());
        let rep = fd_check(&mu, &zero, &[0.08, 0.04], FdWhat::First, 100, 1, 5).unwrap();
        for row in &rep.rows {
            assert_eq!(row.estimate, 0.0);
            assert_eq!(row.lipschitz_ratio, 0.0);
        }
    }
}
