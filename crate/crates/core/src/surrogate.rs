//! The attacker's surrogate noise model: an additive Gaussian or Laplace
//! density with isotropic or diagonal scale, its likelihood, initialisation,
//! and the per-step parameter update that runs before each beam expansion.
//!
//! The per-step objective is the log of the marginal over the current beam and
//! candidate pool,
//!
//! ```text
//! f(theta) = logsumexp_{h, c} [ score_h + lambda * log p(c | h) + log pi_theta(y_t | x_c) ]
//!          = logsumexp_c [ A_c + log pi_theta(y_t | x_c) ],
//! A_c      = logsumexp_h [ score_h + lambda * log p(c | h) ],
//! ```
//!
//! since the surrogate only looks at the current clean embedding.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::nearest_row;
use crate::noise::{NoiseFamily, ObfuscatedSequence};
use crate::prior::{log_sum_exp, PriorModel};
use crate::table::{EmbeddingTable, TokenId};

/// Lower bound applied to every estimated scale.
pub const SCALE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

const GRADIENT_STEP: f64 = 0.1;
const GRADIENT_MAX_ITERS: usize = 50;
const GRADIENT_MAX_HALVINGS: usize = 20;
const GRADIENT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    Isotropic,
    Diagonal,
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" | "iso" => Ok(ScaleMode::Isotropic),
            "diagonal" | "diag" => Ok(ScaleMode::Diagonal),
            other => Err(Error::invalid(format!("unknown scale mode {other:?}"))),
        }
    }
}

/// Surrogate parameters; serialises as `{"family", "mode", "mu": [d], "scale": [1 or d]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub family: NoiseFamily,
    pub mode: ScaleMode,
    pub mu: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SurrogateParams {
    pub fn isotropic(family: NoiseFamily, dim: usize, scale: f64) -> Self {
        Self {
            family,
            mode: ScaleMode::Isotropic,
            mu: vec![0.0; dim],
            scale: vec![scale],
        }
    }

    pub fn diagonal(family: NoiseFamily, scale: Vec<f64>) -> Self {
        Self {
            family,
            mode: ScaleMode::Diagonal,
            mu: vec![0.0; scale.len()],
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn scale_at(&self, i: usize) -> f64 {
        match self.mode {
            ScaleMode::Isotropic => self.scale[0],
            ScaleMode::Diagonal => self.scale[i],
        }
    }

    /// Mean scale across coordinates.
    pub fn mean_scale(&self) -> f64 {
        self.scale.iter().sum::<f64>() / self.scale.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.mode {
            ScaleMode::Isotropic => 1,
            ScaleMode::Diagonal => self.mu.len(),
        };
        if self.scale.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.scale.len(),
            });
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numerical("surrogate scales must be positive and finite".into()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("surrogate mean shift must be finite".into()));
        }
        Ok(())
    }
}

/// `log pi_theta(y | x)` without argument checks.
#[inline]
pub(crate) fn loglik_unchecked(theta: &SurrogateParams, y: &[f32], x: &[f32]) -> f64 {
    let mut acc = 0.0;
    match (theta.family, theta.mode) {
        (NoiseFamily::Gaussian, ScaleMode::Isotropic) => {
            let s = theta.scale[0];
            let mut sq = 0.0;
            for i in 0..y.len() {
                let r = f64::from(y[i]) - f64::from(x[i]) - theta.mu[i];
                sq += r * r;
            }
            let d = y.len() as f64;
            acc = -0.5 * d * LN_2PI - d * s.ln() - sq / (2.0 * s * s);
        }
        (NoiseFamily::Laplace, ScaleMode::Isotropic) => {
            let b = theta.scale[0];
            let mut abs = 0.0;
            for i in 0..y.len() {
                abs += (f64::from(y[i]) - f64::from(x[i]) - theta.mu[i]).abs();
            }
            let d = y.len() as f64;
            acc = -d * (std::f64::consts::LN_2 + b.ln()) - abs / b;
        }
        (NoiseFamily::Gaussian, ScaleMode::Diagonal) => {
            for i in 0..y.len() {
                let s = theta.scale[i];
                let r = f64::from(y[i]) - f64::from(x[i]) - theta.mu[i];
                acc += -0.5 * LN_2PI - s.ln() - r * r / (2.0 * s * s);
            }
        }
        (NoiseFamily::Laplace, ScaleMode::Diagonal) => {
            for i in 0..y.len() {
                let b = theta.scale[i];
                let r = f64::from(y[i]) - f64::from(x[i]) - theta.mu[i];
                acc += -(std::f64::consts::LN_2 + b.ln()) - r.abs() / b;
            }
        }
    }
    acc
}

/// Exact log-density of `y` under the surrogate centred at `x + mu`.
pub fn surrogate_loglik(theta: &SurrogateParams, y: &[f32], x: &[f32]) -> Result<f64> {
    if y.len() != theta.dim() || x.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: if y.len() != theta.dim() { y.len() } else { x.len() },
        });
    }
    theta.validate()?;
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite embedding value".into()));
    }
    Ok(loglik_unchecked(theta, y, x))
}

/// Starting parameters from the residuals to each position's nearest row
/// (l2 for Gaussian, l1 for Laplace): mean squared residual for the Gaussian
/// variance, mean absolute residual for the Laplace scale, pooled or per
/// coordinate. `mu` starts at zero.
pub fn init_params(
    family: NoiseFamily,
    y: &ObfuscatedSequence,
    table: &EmbeddingTable,
    mode: ScaleMode,
) -> Result<SurrogateParams> {
    if y.is_empty() {
        return Err(Error::invalid("cannot initialise the surrogate from an empty sequence"));
    }
    if y.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: y.dim(),
        });
    }
    let d = table.dim();
    let norm = family.sensitivity_norm();
    let mut per_coord = vec![CompensatedSum::default(); d];
    for t in 0..y.len() {
        let row = y.row(t);
        let x = table.row(nearest_row(table, row, norm));
        for i in 0..d {
            let r = f64::from(row[i]) - f64::from(x[i]);
            per_coord[i].add(match family {
                NoiseFamily::Gaussian => r * r,
                NoiseFamily::Laplace => r.abs(),
            });
        }
    }
    let n = y.len() as f64;
    let to_scale = |moment: f64| -> f64 {
        let s = match family {
            NoiseFamily::Gaussian => moment.sqrt(),
            NoiseFamily::Laplace => moment,
        };
        s.max(SCALE_FLOOR)
    };
    Ok(match mode {
        ScaleMode::Isotropic => {
            let mean = per_coord.iter().map(CompensatedSum::value).sum::<f64>() / (n * d as f64);
            SurrogateParams::isotropic(family, d, to_scale(mean))
        }
        ScaleMode::Diagonal => SurrogateParams::diagonal(
            family,
            per_coord.iter().map(|s| to_scale(s.value() / n)).collect(),
        ),
    })
}

/// The theta-independent part of one step's objective: the candidate ids and
/// their beam-marginalised prior offsets `A_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvidence {
    pub candidates: Vec<TokenId>,
    pub offsets: Vec<f64>,
}

impl StepEvidence {
    /// `hyp_scores[h]` is a hypothesis log-score and `prior_rows[h]` its full
    /// next-token log-probability vector; `prior_weight` scales the prior.
    pub fn from_parts(
        hyp_scores: &[f64],
        prior_rows: &[Vec<f64>],
        candidates: &[TokenId],
        prior_weight: f64,
    ) -> Result<Self> {
        if hyp_scores.is_empty() || candidates.is_empty() {
            return Err(Error::invalid("step evidence needs a non-empty beam and candidate set"));
        }
        if hyp_scores.len() != prior_rows.len() {
            return Err(Error::DimensionMismatch {
                expected: hyp_scores.len(),
                actual: prior_rows.len(),
            });
        }
        let mut terms = vec![0.0; hyp_scores.len()];
        let offsets = candidates
            .iter()
            .map(|&c| {
                for (h, (&s, row)) in hyp_scores.iter().zip(prior_rows).enumerate() {
                    terms[h] = s + weighted(prior_weight, row[c as usize]);
                }
                log_sum_exp(&terms)
            })
            .collect();
        Ok(Self {
            candidates: candidates.to_vec(),
            offsets,
        })
    }

    /// Queries `prior` once per hypothesis.
    pub fn from_beam(
        beam: &[(&[TokenId], f64)],
        prior: &dyn PriorModel,
        candidates: &[TokenId],
        prior_weight: f64,
    ) -> Result<Self> {
        let scores: Vec<f64> = beam.iter().map(|(_, s)| *s).collect();
        let rows = beam
            .iter()
            .map(|(ctx, _)| prior.next_token_logprobs(ctx))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(&scores, &rows, candidates, prior_weight)
    }
}

/// `lambda * lp` with `0 * -inf` taken as 0, so a zero weight switches the prior off.
#[inline]
pub(crate) fn weighted(lambda: f64, lp: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * lp
    }
}

fn candidate_terms(theta: &SurrogateParams, ev: &StepEvidence, y: &[f32], table: &EmbeddingTable) -> Vec<f64> {
    ev.candidates
        .iter()
        .zip(&ev.offsets)
        .map(|(&c, &a)| a + loglik_unchecked(theta, y, table.row(c)))
        .collect()
}

fn check_step_inputs(theta: &SurrogateParams, ev: &StepEvidence, y: &[f32], table: &EmbeddingTable) -> Result<()> {
    theta.validate()?;
    if y.len() != table.dim() || theta.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: if y.len() != table.dim() { y.len() } else { theta.dim() },
        });
    }
    if ev.candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    if let Some(&c) = ev.candidates.iter().find(|&&c| c as usize >= table.vocab_size()) {
        return Err(Error::TokenOutOfRange {
            id: c,
            vocab_size: table.vocab_size(),
        });
    }
    Ok(())
}

/// Log of the beam-by-candidate marginal likelihood of `y_t` under `theta`.
pub fn step_marginal_loglik(
    theta: &SurrogateParams,
    evidence: &StepEvidence,
    y: &[f32],
    table: &EmbeddingTable,
) -> Result<f64> {
    check_step_inputs(theta, evidence, y, table)?;
    let f = log_sum_exp(&candidate_terms(theta, evidence, y, table));
    if f == f64::NEG_INFINITY {
        return Err(Error::Numerical("every term of the step marginal is -inf".into()));
    }
    if !f.is_finite() {
        return Err(Error::Numerical(format!("step marginal is {f}")));
    }
    Ok(f)
}

/// Gradient of [`step_marginal_loglik`] with respect to `mu` and the log of
/// each free scale (`scale.len()` entries). Returns `(f, d_mu, d_log_scale)`.
pub fn step_marginal_gradient(
    theta: &SurrogateParams,
    evidence: &StepEvidence,
    y: &[f32],
    table: &EmbeddingTable,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let f = step_marginal_loglik(theta, evidence, y, table)?;
    let terms = candidate_terms(theta, evidence, y, table);
    let d = theta.dim();
    let mut g_mu = vec![0.0; d];
    let mut g_s = vec![0.0; theta.scale.len()];
    for (&c, &term) in evidence.candidates.iter().zip(&terms) {
        let gamma = (term - f).exp();
        if gamma == 0.0 {
            continue;
        }
        let x = table.row(c);
        for i in 0..d {
            let s = theta.scale_at(i);
            let r = f64::from(y[i]) - f64::from(x[i]) - theta.mu[i];
            let (dm, ds) = match theta.family {
                NoiseFamily::Gaussian => (r / (s * s), -1.0 + r * r / (s * s)),
                NoiseFamily::Laplace => (r.signum() / s, -1.0 + r.abs() / s),
            };
            g_mu[i] += gamma * dm;
            let k = match theta.mode {
                ScaleMode::Isotropic => 0,
                ScaleMode::Diagonal => i,
            };
            g_s[k] += gamma * ds;
        }
    }
    Ok((f, g_mu, g_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMethod {
    ClosedForm,
    Gradient,
    Fixed,
}

impl FromStr for EstimationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" | "closed_form" | "em" => Ok(EstimationMethod::ClosedForm),
            "gradient" => Ok(EstimationMethod::Gradient),
            "fixed" => Ok(EstimationMethod::Fixed),
            other => Err(Error::invalid(format!("unknown estimation method {other:?}"))),
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Responsibility-weighted residual moments accumulated over all steps so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    weight: CompensatedSum,
    residual: Vec<CompensatedSum>,
    squared: Vec<CompensatedSum>,
    absolute: Vec<CompensatedSum>,
}

impl SufficientStats {
    pub fn new(dim: usize) -> Self {
        Self {
            weight: CompensatedSum::default(),
            residual: vec![CompensatedSum::default(); dim],
            squared: vec![CompensatedSum::default(); dim],
            absolute: vec![CompensatedSum::default(); dim],
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight.value()
    }

    pub fn residual_sum(&self) -> Vec<f64> {
        self.residual.iter().map(CompensatedSum::value).collect()
    }

    pub fn squared_sum(&self) -> Vec<f64> {
        self.squared.iter().map(CompensatedSum::value).collect()
    }

    pub fn absolute_sum(&self) -> Vec<f64> {
        self.absolute.iter().map(CompensatedSum::value).collect()
    }

    fn accumulate(&mut self, gamma: f64, y: &[f32], x: &[f32]) {
        self.weight.add(gamma);
        for i in 0..y.len() {
            let r = f64::from(y[i]) - f64::from(x[i]);
            self.residual[i].add(gamma * r);
            self.squared[i].add(gamma * r * r);
            self.absolute[i].add(gamma * r.abs());
        }
    }
}

/// Stateful per-step estimator. Holds the sufficient statistics that let the
/// closed-form update use every observation `y_1..y_t` seen so far.
#[derive(Debug, Clone)]
pub struct SurrogateEstimator {
    method: EstimationMethod,
    estimate_mu: bool,
    stats: SufficientStats,
    clamped_steps: usize,
}

impl SurrogateEstimator {
    pub fn new(method: EstimationMethod, dim: usize) -> Self {
        Self {
            method,
            estimate_mu: false,
            stats: SufficientStats::new(dim),
            clamped_steps: 0,
        }
    }

    /// Also estimate the mean shift (off by default).
    pub fn with_mu_estimation(mut self, on: bool) -> Self {
        self.estimate_mu = on;
        self
    }

    pub fn method(&self) -> EstimationMethod {
        self.method
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    /// Number of updates whose scale hit [`SCALE_FLOOR`].
    pub fn clamped_steps(&self) -> usize {
        self.clamped_steps
    }

    pub fn step(
        &mut self,
        prev: &SurrogateParams,
        evidence: &StepEvidence,
        y: &[f32],
        table: &EmbeddingTable,
    ) -> Result<SurrogateParams> {
        match self.method {
            EstimationMethod::Fixed => {
                check_step_inputs(prev, evidence, y, table)?;
                Ok(prev.clone())
            }
            EstimationMethod::ClosedForm => self.closed_form(prev, evidence, y, table),
            EstimationMethod::Gradient => self.gradient(prev, evidence, y, table),
        }
    }

    fn closed_form(
        &mut self,
        prev: &SurrogateParams,
        ev: &StepEvidence,
        y: &[f32],
        table: &EmbeddingTable,
    ) -> Result<SurrogateParams> {
        let f = step_marginal_loglik(prev, ev, y, table)?;
        let terms = candidate_terms(prev, ev, y, table);
        for (&c, &term) in ev.candidates.iter().zip(&terms) {
            let gamma = (term - f).exp();
            if gamma > 0.0 {
                self.stats.accumulate(gamma, y, table.row(c));
            }
        }
        let w = self.stats.weight();
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Numerical("responsibility mass vanished".into()));
        }
        let d = prev.dim();
        let (mu, moments): (Vec<f64>, Vec<f64>) = match prev.family {
            NoiseFamily::Gaussian => {
                let sq = self.stats.squared_sum();
                if self.estimate_mu {
                    let mu: Vec<f64> = self.stats.residual_sum().iter().map(|s| s / w).collect();
                    let var = sq.iter().zip(&mu).map(|(s, m)| (s / w - m * m).max(0.0)).collect();
                    (mu, var)
                } else {
                    (vec![0.0; d], sq.iter().map(|s| s / w).collect())
                }
            }
            NoiseFamily::Laplace => (vec![0.0; d], self.stats.absolute_sum().iter().map(|s| s / w).collect()),
        };
        let to_scale = |m: f64| match prev.family {
            NoiseFamily::Gaussian => m.sqrt(),
            NoiseFamily::Laplace => m,
        };
        let raw: Vec<f64> = match prev.mode {
            ScaleMode::Isotropic => vec![to_scale(moments.iter().sum::<f64>() / d as f64)],
            ScaleMode::Diagonal => moments.into_iter().map(to_scale).collect(),
        };
        let next = SurrogateParams {
            family: prev.family,
            mode: prev.mode,
            mu,
            scale: self.clamp(raw),
        };
        next.validate()?;
        Ok(next)
    }

    fn clamp(&mut self, raw: Vec<f64>) -> Vec<f64> {
        if raw.iter().any(|&s| s.is_nan() || s < SCALE_FLOOR) {
            self.clamped_steps += 1;
        }
        raw.into_iter()
            .map(|s| if s.is_nan() { SCALE_FLOOR } else { s.max(SCALE_FLOOR) })
            .collect()
    }

    /// Backtracking ascent on the step objective over `(mu, log scale)`.
    fn gradient(
        &mut self,
        prev: &SurrogateParams,
        ev: &StepEvidence,
        y: &[f32],
        table: &EmbeddingTable,
    ) -> Result<SurrogateParams> {
        let mut theta = prev.clone();
        let mut clamped = false;
        let (mut f, mut g_mu, mut g_s) = step_marginal_gradient(&theta, ev, y, table)?;
        let log_floor = SCALE_FLOOR.ln();
        for _ in 0..GRADIENT_MAX_ITERS {
            let mut eta = GRADIENT_STEP;
            let mut accepted = None;
            for _ in 0..=GRADIENT_MAX_HALVINGS {
                let mut cand = theta.clone();
                if self.estimate_mu {
                    for (m, g) in cand.mu.iter_mut().zip(&g_mu) {
                        *m += eta * g;
                    }
                }
                let mut hit_floor = false;
                for (s, g) in cand.scale.iter_mut().zip(&g_s) {
                    let mut ls = s.ln() + eta * g;
                    if ls < log_floor {
                        ls = log_floor;
                        hit_floor = true;
                    }
                    *s = ls.exp().max(SCALE_FLOOR);
                }
                if cand.mu.iter().chain(&cand.scale).any(|v| !v.is_finite()) {
                    eta *= 0.5;
                    continue;
                }
                match step_marginal_loglik(&cand, ev, y, table) {
                    Ok(fc) if fc >= f => {
                        accepted = Some((cand, fc, hit_floor));
                        break;
                    }
                    _ => eta *= 0.5,
                }
            }
            let Some((cand, fc, hit_floor)) = accepted else {
                break;
            };
            clamped |= hit_floor;
            let rel = (fc - f).abs() / f.abs().max(1e-12);
            theta = cand;
            f = fc;
            if rel < GRADIENT_REL_TOL {
                break;
            }
            (_, g_mu, g_s) = step_marginal_gradient(&theta, ev, y, table)?;
        }
        if !f.is_finite() {
            return Err(Error::Numerical("gradient ascent produced a non-finite objective".into()));
        }
        if clamped {
            self.clamped_steps += 1;
        }
        Ok(theta)
    }
}
