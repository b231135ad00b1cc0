//! Order-parameter baselines: the UMP binomial test, a Dirichlet-multinomial
//! Bayes-factor test on Hamming weights, and the threshold test on QCNN outputs.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Binomial pmf computed in log space; exact endpoints for `p ∈ {0, 1}`.
pub fn binomial_pmf(n: usize, p: f64, x: usize) -> f64 {
    if x > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let ln_c = ln_gamma(n as f64 + 1.0) - ln_gamma(x as f64 + 1.0) - ln_gamma((n - x) as f64 + 1.0);
    (ln_c + x as f64 * p.ln() + (n - x) as f64 * (1.0 - p).ln()).exp()
}

// Repeated convolution with (1 − p, p) uses only products and sums, which is
// exact for dyadic p at moderate n.
const CONVOLUTION_LIMIT: usize = 4096;

fn pmf_table(n: usize, p: f64) -> Vec<f64> {
    if n > CONVOLUTION_LIMIT {
        return (0..=n).map(|x| binomial_pmf(n, p, x)).collect();
    }
    let q = 1.0 - p;
    let mut t = vec![0.0; n + 1];
    t[0] = 1.0;
    for k in 1..=n {
        for x in (1..=k).rev() {
            t[x] = t[x] * q + t[x - 1] * p;
        }
        t[0] *= q;
    }
    t
}

/// Randomized test rejecting `⟨O⟩ ≤ ⟨O⟩_th` when more than `c` of `n` ±1
/// outcomes are +1, and with probability `γ` when exactly `c` are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialUmpTest {
    pub n: usize,
    pub threshold: f64,
    pub alpha: f64,
    pub c: usize,
    pub gamma: f64,
}

pub fn build_binomial_ump(n: usize, threshold: f64, alpha: f64) -> Result<BinomialUmpTest> {
    if n == 0 {
        return Err(Error::InvalidCopyCount("the binomial test needs n ≥ 1".into()));
    }
    if !(threshold.abs() <= 1.0) {
        return Err(Error::InvalidConfig(format!("threshold expectation {threshold} outside [−1, 1]")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let p = (1.0 + threshold) / 2.0;
    let pmf = pmf_table(n, p);
    // tail[c] = P(x > c)
    let mut tail = vec![0.0; n + 1];
    for c in (0..n).rev() {
        tail[c] = tail[c + 1] + pmf[c + 1];
    }
    let c = (0..=n).find(|&c| tail[c] <= alpha).unwrap_or(n);
    let gamma = if pmf[c] > 0.0 { ((alpha - tail[c]) / pmf[c]).clamp(0.0, 1.0) } else { 0.0 };
    Ok(BinomialUmpTest { n, threshold, alpha, c, gamma })
}

impl BinomialUmpTest {
    /// Probability of rejecting when each outcome is +1 with probability `(1+⟨O⟩)/2`.
    pub fn reject_probability(&self, expectation: f64) -> f64 {
        let p = ((1.0 + expectation) / 2.0).clamp(0.0, 1.0);
        let pmf = pmf_table(self.n, p);
        let above: f64 = pmf[self.c + 1..].iter().sum();
        (above + self.gamma * pmf[self.c]).clamp(0.0, 1.0)
    }

    /// `P(x < c) + (1 − γ) pmf(c)`.
    pub fn accept_probability(&self, expectation: f64) -> f64 {
        let p = ((1.0 + expectation) / 2.0).clamp(0.0, 1.0);
        let pmf = pmf_table(self.n, p);
        let below: f64 = pmf[..self.c].iter().sum();
        (below + (1.0 - self.gamma) * pmf[self.c]).clamp(0.0, 1.0)
    }
}

/// Per-state Type-I (label 0) and Type-II (label 1) errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateErrors {
    pub alpha_states: Vec<f64>,
    pub beta_states: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl StateErrors {
    pub fn mean_error(&self) -> f64 {
        0.5 * (self.alpha + self.beta)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn binomial_error_probs(test: &BinomialUmpTest, expectations: &[f64], labels: &[u8]) -> Result<StateErrors> {
    if expectations.len() != labels.len() {
        return Err(Error::Dimension("one label per expectation required".into()));
    }
    let mut alpha_states = Vec::new();
    let mut beta_states = Vec::new();
    for (&o, &y) in expectations.iter().zip(labels) {
        if !(o.abs() <= 1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!("expectation {o} outside [−1, 1]")));
        }
        match y {
            0 => alpha_states.push(test.reject_probability(o)),
            1 => beta_states.push(test.accept_probability(o)),
            _ => return Err(Error::InvalidConfig(format!("label {y}"))),
        }
    }
    let (alpha, beta) = (mean(&alpha_states), mean(&beta_states));
    Ok(StateErrors { alpha_states, beta_states, alpha, beta })
}

/// Threshold test on QCNN outputs `f`: the binomial test at `⟨O⟩_th = 0.5`.
/// The count of outputs below zero is returned alongside, since `(1+f)/2`
/// then no longer matches an output read as a probability.
pub fn threshold_np_test_for_outputs(f: &[f64], labels: &[u8], n: usize, alpha: f64) -> Result<(StateErrors, usize)> {
    let test = build_binomial_ump(n, 0.5, alpha)?;
    let negatives = f.iter().filter(|&&x| x < 0.0).count();
    Ok((binomial_error_probs(&test, f, labels)?, negatives))
}

/// Dirichlet pseudo-counts over Hamming weights `0..=L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub alpha: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidConfig("Dirichlet pseudo-counts must be positive".into()));
        }
        Ok(Self { alpha })
    }

    /// `ln B(α) = Σ ln Γ(α_m) − ln Γ(Σ α_m)`.
    pub fn ln_beta(&self) -> f64 {
        ln_multivariate_beta(self.alpha.iter().copied())
    }
}

// Terms are summed in sorted order so that the result does not depend on the
// category order.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn ln_multivariate_beta(a: impl Iterator<Item = f64>) -> f64 {
    let a: Vec<f64> = a.collect();
    let total = sorted_sum(a.clone());
    sorted_sum(a.into_iter().map(ln_gamma).collect()) - ln_gamma(total)
}

fn binomial_coefficients(l: usize) -> Vec<f64> {
    let mut exact = vec![1u128; l + 1];
    for m in 1..=l {
        match exact[m - 1].checked_mul((l - m + 1) as u128) {
            Some(v) => exact[m] = v / m as u128,
            None => {
                let ln_fact = |x: usize| ln_gamma(x as f64 + 1.0);
                return (0..=l)
                    .map(|m| {
                        let m = m.min(l - m);
                        (ln_fact(l) - ln_fact(m) - ln_fact(l - m)).exp()
                    })
                    .collect();
            }
        }
    }
    exact.into_iter().map(|c| c as f64).collect()
}

/// `(prior0, ascending ramp, descending ramp)` for `L` qubits.
pub fn build_dirichlet_priors(l: usize) -> Result<(DirichletPrior, DirichletPrior, DirichletPrior)> {
    if l == 0 {
        return Err(Error::InvalidSystemSize("L must be at least 1".into()));
    }
    let scale = 0.5f64.powi(l as i32);
    let a0: Vec<f64> = binomial_coefficients(l).into_iter().map(|c| c * scale).collect();
    let norm = 2.0 / ((l + 1) as f64 * (l + 2) as f64);
    let asc: Vec<f64> = (1..=l + 1).map(|m| m as f64 * norm).collect();
    let desc: Vec<f64> = asc.iter().rev().copied().collect();
    Ok((DirichletPrior::new(a0)?, DirichletPrior::new(asc)?, DirichletPrior::new(desc)?))
}

/// `ln [B(α1 + x) / B(α1)] − ln [B(α0 + x) / B(α0)]`.
pub fn log_bayes_factor(counts: &[i64], prior0: &DirichletPrior, prior1: &DirichletPrior) -> Result<f64> {
    if counts.iter().any(|&x| x < 0) {
        return Err(Error::InvalidCounts("negative count".into()));
    }
    if counts.len() != prior0.alpha.len() || counts.len() != prior1.alpha.len() {
        return Err(Error::Dimension("counts and priors cover different categories".into()));
    }
    let post = |p: &DirichletPrior| ln_multivariate_beta(p.alpha.iter().zip(counts).map(|(a, &x)| a + x as f64)) - p.ln_beta();
    Ok(post(prior1) - post(prior0))
}

/// How the two ramp priors are combined into one Bayes factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampRule {
    /// The ramp most favorable to the ordered phase.
    #[default]
    Max,
    Min,
}

/// Bayes test of "trivial" (binomial-shaped Hamming weights) against "ordered" (ramps).
#[derive(Clone, Debug)]
pub struct BayesTest {
    pub prior0: DirichletPrior,
    pub ascending: DirichletPrior,
    pub descending: DirichletPrior,
    pub rule: RampRule,
}

impl BayesTest {
    pub fn new(l: usize, rule: RampRule) -> Result<Self> {
        let (prior0, ascending, descending) = build_dirichlet_priors(l)?;
        Ok(Self { prior0, ascending, descending, rule })
    }

    pub fn log_bf(&self, counts: &[i64]) -> Result<f64> {
        let a = log_bayes_factor(counts, &self.prior0, &self.ascending)?;
        let d = log_bayes_factor(counts, &self.prior0, &self.descending)?;
        Ok(match self.rule {
            RampRule::Max => a.max(d),
            RampRule::Min => a.min(d),
        })
    }
}

/// Rejection probability of `H0` with a 95% interval (degenerate when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectEstimate {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub exact: bool,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let z = 1.959963984540054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Number of compositions of `n` into `parts` nonnegative parts, saturating.
pub fn composition_count(n: usize, parts: usize) -> u128 {
    // C(n + parts − 1, parts − 1)
    let k = parts.saturating_sub(1).min(n);
    let top = n + parts.saturating_sub(1);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((top - i) as u128) / (i as u128 + 1);
    }
    c
}

pub const EXACT_ENUMERATION_LIMIT: u128 = 1_000_000;

fn for_each_composition(n: usize, parts: usize, f: &mut impl FnMut(&[i64])) {
    fn rec(rest: usize, idx: usize, counts: &mut Vec<i64>, f: &mut impl FnMut(&[i64])) {
        if idx + 1 == counts.len() {
            counts[idx] = rest as i64;
            f(counts);
            return;
        }
        for x in 0..=rest {
            counts[idx] = x as i64;
            rec(rest - x, idx + 1, counts, f);
        }
        counts[idx] = 0;
    }
    let mut counts = vec![0i64; parts];
    rec(n, 0, &mut counts, f);
}

fn ln_multinomial_pmf(counts: &[i64], ln_p: &[f64], n: usize) -> f64 {
    let mut s = ln_gamma(n as f64 + 1.0);
    for (&x, &lp) in counts.iter().zip(ln_p) {
        if x > 0 {
            if lp == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            s += x as f64 * lp - ln_gamma(x as f64 + 1.0);
        }
    }
    s
}

/// `P(ln BF ≥ ln c)` for `n` i.i.d. Hamming-weight draws from `p_m`, one entry per
/// threshold. Exact when the number of count vectors is at most
/// [`EXACT_ENUMERATION_LIMIT`], otherwise Monte Carlo with `mc_samples` draws.
pub fn bayes_reject_probabilities<R: Rng + ?Sized>(
    test: &BayesTest,
    p_m: &[f64],
    n: usize,
    log_c_grid: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<Vec<RejectEstimate>> {
    let parts = p_m.len();
    if parts != test.prior0.alpha.len() {
        return Err(Error::Dimension("weight distribution and priors differ in size".into()));
    }
    if p_m.iter().any(|&p| !(p >= -1e-12)) || (p_m.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidConfig("Hamming-weight distribution must be a probability vector".into()));
    }
    let p_m: Vec<f64> = p_m.iter().map(|&p| p.max(0.0)).collect();
    if composition_count(n, parts) <= EXACT_ENUMERATION_LIMIT {
        let ln_p: Vec<f64> = p_m.iter().map(|p| p.ln()).collect();
        let mut mass = vec![0.0; log_c_grid.len()];
        let mut err = None;
        for_each_composition(n, parts, &mut |counts| {
            let lp = ln_multinomial_pmf(counts, &ln_p, n);
            if lp == f64::NEG_INFINITY {
                return;
            }
            match test.log_bf(counts) {
                Ok(bf) => {
                    let w = lp.exp();
                    for (acc, &lc) in mass.iter_mut().zip(log_c_grid) {
                        if bf >= lc {
                            *acc += w;
                        }
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        return Ok(mass.into_iter().map(|p| RejectEstimate { p: p.clamp(0.0, 1.0), lo: p, hi: p, exact: true }).collect());
    }
    if mc_samples < 10_000 {
        return Err(Error::InvalidConfig("Monte Carlo estimates need at least 10^4 samples".into()));
    }
    let mut hits = vec![0usize; log_c_grid.len()];
    let mut counts = vec![0i64; parts];
    for _ in 0..mc_samples {
        // Sequential conditional binomials give one multinomial draw.
        let mut rest = n as u64;
        let mut mass_left = 1.0;
        for (m, &p) in p_m.iter().enumerate() {
            if m + 1 == parts || rest == 0 {
                counts[m] = rest as i64;
                rest = 0;
                continue;
            }
            let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
            let x = Binomial::new(rest, q).map_err(|e| Error::NumericalFailure(e.to_string()))?.sample(rng);
            counts[m] = x as i64;
            rest -= x;
            mass_left -= p;
        }
        let bf = test.log_bf(&counts)?;
        for (h, &lc) in hits.iter_mut().zip(log_c_grid) {
            if bf >= lc {
                *h += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| {
            let (lo, hi) = wilson_interval(h, mc_samples);
            RejectEstimate { p: h as f64 / mc_samples as f64, lo, hi, exact: false }
        })
        .collect())
}

/// Exact rejection probabilities for many states from one pass over the count vectors.
fn exact_reject_many(test: &BayesTest, dists: &[Vec<f64>], n: usize, log_c_grid: &[f64]) -> Result<Vec<Vec<RejectEstimate>>> {
    let parts = test.prior0.alpha.len();
    let mut ln_ps = Vec::with_capacity(dists.len());
    for p in dists {
        if p.len() != parts {
            return Err(Error::Dimension("weight distribution and priors differ in size".into()));
        }
        if p.iter().any(|&x| !(x >= -1e-12)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidConfig("Hamming-weight distribution must be a probability vector".into()));
        }
        ln_ps.push(p.iter().map(|&x| x.max(0.0).ln()).collect::<Vec<f64>>());
    }
    let mut mass = vec![vec![0.0; log_c_grid.len()]; dists.len()];
    let mut err = None;
    for_each_composition(n, parts, &mut |counts| {
        let bf = match test.log_bf(counts) {
            Ok(b) => b,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        let first_rejecting = log_c_grid.iter().position(|&lc| bf >= lc);
        if first_rejecting.is_none() && log_c_grid.windows(2).all(|w| w[0] <= w[1]) {
            return;
        }
        for (acc, ln_p) in mass.iter_mut().zip(&ln_ps) {
            let lp = ln_multinomial_pmf(counts, ln_p, n);
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let w = lp.exp();
            for (a, &lc) in acc.iter_mut().zip(log_c_grid) {
                if bf >= lc {
                    *a += w;
                }
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(mass
        .into_iter()
        .map(|m| m.into_iter().map(|p| RejectEstimate { p: p.clamp(0.0, 1.0), lo: p, hi: p, exact: true }).collect())
        .collect())
}

/// The default Bayes-threshold grid: 40 values of `ln c` on `[−10, 10]`.
pub fn default_log_c_grid() -> Vec<f64> {
    crate::npclassify::linspace(-10.0, 10.0, 40)
}

/// Errors at every threshold of the grid for labeled test states.
pub fn bayes_test_error_probs<R: Rng + ?Sized>(
    test: &BayesTest,
    weight_dists: &[Vec<f64>],
    labels: &[u8],
    n: usize,
    log_c_grid: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<Vec<StateErrors>> {
    if weight_dists.len() != labels.len() {
        return Err(Error::Dimension("one label per state required".into()));
    }
    let parts = test.prior0.alpha.len();
    let per_state = if composition_count(n, parts) <= EXACT_ENUMERATION_LIMIT && weight_dists.len() > 1 {
        exact_reject_many(test, weight_dists, n, log_c_grid)?
    } else {
        let mut v = Vec::with_capacity(labels.len());
        for p in weight_dists {
            v.push(bayes_reject_probabilities(test, p, n, log_c_grid, mc_samples, rng)?);
        }
        v
    };
    Ok((0..log_c_grid.len())
        .map(|g| {
            let mut alpha_states = Vec::new();
            let mut beta_states = Vec::new();
            for (est, &y) in per_state.iter().zip(labels) {
                if y == 0 {
                    alpha_states.push(est[g].p);
                } else {
                    beta_states.push(1.0 - est[g].p);
                }
            }
            let (alpha, beta) = (mean(&alpha_states), mean(&beta_states));
            StateErrors { alpha_states, beta_states, alpha, beta }
        })
        .collect())
}

/// Significance levels swept to trace the binomial test's trade-off curve.
pub fn default_alpha_levels() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}
