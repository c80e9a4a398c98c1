//! Causal beam search interleaved with per-step surrogate estimation.
//!
//! At step `t`, with beam `B_{t-1}` and surrogate `theta_{t-1}`:
//!
//! 1. query the prior once per hypothesis for its full next-token vector;
//! 2. pre-select the `C` candidates most likely under `theta_{t-1}`;
//! 3. update the surrogate on that beam and candidate pool;
//! 4. score every extension as
//!    `score + log pi_theta_t(y_t | x_c) + lambda * log p(c | prefix)`
//!    and keep the best `k`.
//!
//! Scores live in the log domain throughout. Ties are broken by the
//! lexicographic order of the token-id sequence.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseFamily, ObfuscatedSequence};
use crate::prior::{MappedPrior, PriorModel, TokenMap};
use crate::surrogate::{
    init_params, loglik_unchecked, weighted, EstimationMethod, ScaleMode, StepEvidence, SurrogateEstimator,
    SurrogateParams,
};
use crate::table::{EmbeddingTable, TokenId, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    pub ids: TokenSequence,
    pub log_score: f64,
}

impl BeamHypothesis {
    pub fn empty() -> Self {
        Self {
            ids: TokenSequence::default(),
            log_score: 0.0,
        }
    }
}

/// Descending score, then ascending id sequence.
pub fn beam_order(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_score.total_cmp(&a.log_score).then_with(|| a.ids.cmp(&b.ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Hypotheses kept after each step.
    pub beam_width: usize,
    /// Candidates considered per step; `None` means the whole vocabulary.
    pub candidate_pool: Option<usize>,
    /// Weight on the prior log-probability (1 reproduces the plain product).
    pub prior_weight: f64,
    pub estimation: EstimationMethod,
    pub family: NoiseFamily,
    pub mode: ScaleMode,
    pub estimate_mu: bool,
    /// Starting surrogate; estimated from the input when absent.
    pub initial_params: Option<SurrogateParams>,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 20,
            candidate_pool: None,
            prior_weight: 1.0,
            estimation: EstimationMethod::ClosedForm,
            family: NoiseFamily::Gaussian,
            mode: ScaleMode::Isotropic,
            estimate_mu: false,
            initial_params: None,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be >= 1"));
        }
        if let Some(c) = self.candidate_pool {
            if c == 0 || c > vocab_size {
                return Err(Error::invalid(format!(
                    "candidate pool must lie in [1, {vocab_size}], got {c}"
                )));
            }
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return Err(Error::invalid(format!(
                "prior weight must be finite and >= 0, got {}",
                self.prior_weight
            )));
        }
        if let Some(theta) = &self.initial_params {
            theta.validate()?;
            if theta.family != self.family {
                return Err(Error::invalid("initial surrogate family differs from the configured family"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub seq_id: String,
    pub decoded: TokenSequence,
    pub decoded_tokens: Vec<String>,
    pub final_beam: Vec<BeamHypothesis>,
    /// `theta_0` followed by the estimate used at each step.
    pub theta_trajectory: Vec<SurrogateParams>,
    pub step_ms: Vec<f64>,
    /// Context positions dropped by cross-vocabulary translation.
    pub context_drops: u64,
    /// Steps whose scale estimate hit the floor.
    pub clamped_steps: usize,
}

/// The `pool_size` ids with the highest surrogate likelihood for `y`,
/// best first, ties to the smaller id. `allowed` restricts the vocabulary.
pub fn candidate_pool(
    theta: &SurrogateParams,
    y: &[f32],
    table: &EmbeddingTable,
    pool_size: usize,
    allowed: Option<&[bool]>,
) -> Vec<TokenId> {
    let mut scored: Vec<(f64, TokenId)> = (0..table.vocab_size() as TokenId)
        .into_par_iter()
        .filter(|&id| allowed.is_none_or(|mask| mask[id as usize]))
        .map(|id| (loglik_unchecked(theta, y, table.row(id)), id))
        .collect();
    let by_rank = |a: &(f64, TokenId), b: &(f64, TokenId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let keep = pool_size.min(scored.len());
    if keep == 0 {
        return Vec::new();
    }
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep - 1, by_rank);
        scored.truncate(keep);
    }
    scored.sort_unstable_by(by_rank);
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Extends every hypothesis by every candidate and keeps the best
/// `beam_width`, sorted by [`beam_order`]. `prior_rows[h]` is the prior's
/// full next-token vector for `beam[h]`.
#[allow(clippy::too_many_arguments)]
pub fn expand_with_prior_rows(
    beam: &[BeamHypothesis],
    prior_rows: &[Vec<f64>],
    y: &[f32],
    theta: &SurrogateParams,
    table: &EmbeddingTable,
    candidates: &[TokenId],
    beam_width: usize,
    prior_weight: f64,
) -> Vec<BeamHypothesis> {
    let emission: Vec<f64> = candidates
        .iter()
        .map(|&c| loglik_unchecked(theta, y, table.row(c)))
        .collect();
    let mut ext: Vec<(f64, u32, u32)> = Vec::with_capacity(beam.len() * candidates.len());
    for (h, (hyp, row)) in beam.iter().zip(prior_rows).enumerate() {
        for (j, &c) in candidates.iter().enumerate() {
            let s = hyp.log_score + emission[j] + weighted(prior_weight, row[c as usize]);
            if s.is_finite() {
                ext.push((s, h as u32, c));
            }
        }
    }
    let order = |a: &(f64, u32, u32), b: &(f64, u32, u32)| {
        b.0.total_cmp(&a.0)
            .then_with(|| beam[a.1 as usize].ids.cmp(&beam[b.1 as usize].ids))
            .then(a.2.cmp(&b.2))
    };
    let keep = beam_width.min(ext.len());
    if keep == 0 {
        return Vec::new();
    }
    if keep < ext.len() {
        ext.select_nth_unstable_by(keep - 1, order);
        ext.truncate(keep);
    }
    ext.sort_unstable_by(order);
    ext.into_iter()
        .map(|(s, h, c)| {
            let mut ids = beam[h as usize].ids.0.clone();
            ids.push(c);
            BeamHypothesis {
                ids: TokenSequence(ids),
                log_score: s,
            }
        })
        .collect()
}

/// [`expand_with_prior_rows`] querying `prior` for each hypothesis.
pub fn expand_beam(
    beam: &[BeamHypothesis],
    y: &[f32],
    theta: &SurrogateParams,
    prior: &dyn PriorModel,
    table: &EmbeddingTable,
    candidates: &[TokenId],
    config: &DecodeConfig,
) -> Result<Vec<BeamHypothesis>> {
    let rows = beam
        .iter()
        .map(|h| prior.next_token_logprobs(h.ids.ids()))
        .collect::<Result<Vec<_>>>()?;
    Ok(expand_with_prior_rows(
        beam,
        &rows,
        y,
        theta,
        table,
        candidates,
        config.beam_width,
        config.prior_weight,
    ))
}

/// Decodes one obfuscated sequence.
///
/// With a token map the prior is queried in its own vocabulary through
/// [`MappedPrior`]; a restricted map also limits candidates to mapped tokens.
pub fn decode(
    y: &ObfuscatedSequence,
    table: &EmbeddingTable,
    prior: &dyn PriorModel,
    config: &DecodeConfig,
    token_map: Option<&TokenMap>,
) -> Result<AttackResult> {
    if y.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: y.dim(),
        });
    }
    config.validate(table.vocab_size())?;
    match token_map {
        Some(map) => {
            if map.src_vocab_size() != table.vocab_size() {
                return Err(Error::DimensionMismatch {
                    expected: table.vocab_size(),
                    actual: map.src_vocab_size(),
                });
            }
            let mapped = MappedPrior::new(prior, map)?;
            let mask: Option<Vec<bool>> = map
                .is_restricted()
                .then(|| (0..table.vocab_size() as TokenId).map(|id| map.is_mapped(id)).collect());
            if mask.as_ref().is_some_and(|m| !m.contains(&true)) {
                return Err(Error::invalid("restricted token map leaves no candidate tokens"));
            }
            let mut result = run(y, table, &mapped, config, mask.as_deref())?;
            result.context_drops = mapped.dropped_positions();
            Ok(result)
        }
        None => {
            if prior.vocab_size() != table.vocab_size() {
                return Err(Error::DimensionMismatch {
                    expected: table.vocab_size(),
                    actual: prior.vocab_size(),
                });
            }
            run(y, table, prior, config, None)
        }
    }
}

fn run(
    y: &ObfuscatedSequence,
    table: &EmbeddingTable,
    prior: &dyn PriorModel,
    config: &DecodeConfig,
    allowed: Option<&[bool]>,
) -> Result<AttackResult> {
    let mut result = AttackResult {
        seq_id: y.seq_id.clone(),
        decoded: TokenSequence::default(),
        decoded_tokens: Vec::new(),
        final_beam: vec![BeamHypothesis::empty()],
        theta_trajectory: Vec::new(),
        step_ms: Vec::new(),
        context_drops: 0,
        clamped_steps: 0,
    };
    if y.is_empty() {
        return Ok(result);
    }
    let mut theta = match &config.initial_params {
        Some(theta) => {
            if theta.dim() != table.dim() {
                return Err(Error::DimensionMismatch {
                    expected: table.dim(),
                    actual: theta.dim(),
                });
            }
            theta.clone()
        }
        None => init_params(config.family, y, table, config.mode)?,
    };
    result.theta_trajectory.push(theta.clone());
    let mut estimator =
        SurrogateEstimator::new(config.estimation, table.dim()).with_mu_estimation(config.estimate_mu);
    let pool_size = config.candidate_pool.unwrap_or(table.vocab_size());
    let mut beam = vec![BeamHypothesis::empty()];

    for t in 0..y.len() {
        let started = Instant::now();
        let abort = |source: Error, trajectory: &[SurrogateParams]| Error::Aborted {
            step: t,
            source: Box::new(source),
            trajectory: trajectory.to_vec(),
        };
        let y_t = y.row(t);
        let rows = match beam
            .iter()
            .map(|h| prior.next_token_logprobs(h.ids.ids()))
            .collect::<Result<Vec<_>>>()
        {
            Ok(rows) => rows,
            Err(e) => return Err(abort(e, &result.theta_trajectory)),
        };
        let pool = candidate_pool(&theta, y_t, table, pool_size, allowed);
        let scores: Vec<f64> = beam.iter().map(|h| h.log_score).collect();
        let step = StepEvidence::from_parts(&scores, &rows, &pool, config.prior_weight)
            .and_then(|ev| estimator.step(&theta, &ev, y_t, table));
        theta = match step {
            Ok(next) => next,
            Err(e) => return Err(abort(e, &result.theta_trajectory)),
        };
        result.theta_trajectory.push(theta.clone());
        beam = expand_with_prior_rows(
            &beam,
            &rows,
            y_t,
            &theta,
            table,
            &pool,
            config.beam_width,
            config.prior_weight,
        );
        if beam.is_empty() {
            return Err(abort(
                Error::Numerical("every extension scored -inf".into()),
                &result.theta_trajectory,
            ));
        }
        result.step_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }

    result.decoded = beam[0].ids.clone();
    result.decoded_tokens = result.decoded.ids().iter().map(|&id| table.token(id).to_owned()).collect();
    result.final_beam = beam;
    result.clamped_steps = estimator.clamped_steps();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::nn_decode;
    use crate::noise::{obfuscate_sequence, NoiseMechanismSpec};
    use crate::prior::{train_ngram, UniformPrior};
    use crate::table::{Norm, RowMatrix};

    fn fixed(family: NoiseFamily, dim: usize, scale: f64) -> DecodeConfig {
        DecodeConfig {
            beam_width: 1,
            estimation: EstimationMethod::Fixed,
            family,
            initial_params: Some(SurrogateParams::isotropic(family, dim, scale)),
            ..DecodeConfig::default()
        }
    }

    #[test]
    fn pool_edges() {
        let t = EmbeddingTable::generate_synthetic(30, 4, 3, 0.0).unwrap();
        let theta = SurrogateParams::isotropic(NoiseFamily::Gaussian, 4, 1.0);
        let y = [0.1f32, 0.2, -0.3, 0.0];
        let mut all = candidate_pool(&theta, &y, &t, 30, None);
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        let one = candidate_pool(&theta, &y, &t, 1, None);
        let obf = ObfuscatedSequence::new("y", RowMatrix::new(1, 4, y.to_vec()).unwrap()).unwrap();
        assert_eq!(one, nn_decode(&t, &obf, Norm::L2).unwrap().0);
        let mask: Vec<bool> = (0..30).map(|i| i % 2 == 1).collect();
        let odd = candidate_pool(&theta, &y, &t, 30, Some(&mask));
        assert_eq!(odd.len(), 15);
        assert!(odd.iter().all(|id| id % 2 == 1));
    }

    #[test]
    fn pool_is_sorted_best_first() {
        let t = EmbeddingTable::generate_synthetic(50, 3, 9, 0.0).unwrap();
        let theta = SurrogateParams::isotropic(NoiseFamily::Laplace, 3, 0.5);
        let y = [0.0f32, 1.0, -1.0];
        let pool = candidate_pool(&theta, &y, &t, 10, None);
        let ll: Vec<f64> = pool.iter().map(|&c| loglik_unchecked(&theta, &y, t.row(c))).collect();
        assert!(ll.windows(2).all(|w| w[0] >= w[1]));
        let full = candidate_pool(&theta, &y, &t, 50, None);
        assert_eq!(&full[..10], &pool[..]);
    }

    /// Toy step worked by hand: 1-d table rows {0, 1, 3}, y = 0.8, sigma = 1,
    /// beam of one, pool {1, 0}, prior (0.2, 0.3, 0.5).
    #[test]
    fn hand_computed_expansion() {
        let m = RowMatrix::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let t = EmbeddingTable::new("toy", m, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let theta = SurrogateParams::isotropic(NoiseFamily::Gaussian, 1, 1.0);
        let prior = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let beam = vec![BeamHypothesis {
            ids: vec![2].into(),
            log_score: -1.5,
        }];
        let out = expand_with_prior_rows(&beam, &[prior.to_vec()], &[0.8], &theta, &t, &[1, 0], 2, 1.0);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        // b: -1.5 - 0.5 ln 2pi - 0.02 + ln 0.3 ; a: -1.5 - 0.5 ln 2pi - 0.32 + ln 0.2
        let sb = -1.5 - half_ln_2pi - 0.5 * 0.2f64.powi(2) + 0.3f64.ln();
        let sa = -1.5 - half_ln_2pi - 0.5 * 0.8f64.powi(2) + 0.2f64.ln();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].ids.ids(), &[2, 1]);
        assert_eq!(out[1].ids.ids(), &[2, 0]);
        assert!((out[0].log_score - sb).abs() < 1e-6);
        assert!((out[1].log_score - sa).abs() < 1e-6);
        // Narrow beam keeps only the winner.
        let top = expand_with_prior_rows(&beam, &[prior.to_vec()], &[0.8], &theta, &t, &[1, 0], 1, 1.0);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0], out[0]);
    }

    #[test]
    fn expansion_size_is_min_of_width_and_extensions() {
        let t = EmbeddingTable::generate_synthetic(6, 2, 1, 0.0).unwrap();
        let theta = SurrogateParams::isotropic(NoiseFamily::Gaussian, 2, 1.0);
        let prior = UniformPrior::new(6).unwrap();
        let beam = vec![BeamHypothesis::empty()];
        for (k, c, expect) in [(100, 6, 6), (4, 6, 4), (100, 2, 2)] {
            let cfg = DecodeConfig {
                beam_width: k,
                ..DecodeConfig::default()
            };
            let pool: Vec<TokenId> = (0..c).collect();
            let out = expand_beam(&beam, &[0.0, 0.0], &theta, &prior, &t, &pool, &cfg).unwrap();
            assert_eq!(out.len(), expect);
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        // Identical rows and uniform prior: every extension ties.
        let m = RowMatrix::new(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let t = EmbeddingTable::new("eq", m, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let theta = SurrogateParams::isotropic(NoiseFamily::Gaussian, 1, 1.0);
        let rows = vec![vec![-(3f64.ln()); 3]; 2];
        let beam = vec![
            BeamHypothesis { ids: vec![1].into(), log_score: 0.0 },
            BeamHypothesis { ids: vec![0].into(), log_score: 0.0 },
        ];
        let out = expand_with_prior_rows(&beam, &rows, &[0.0], &theta, &t, &[2, 0, 1], 4, 1.0);
        let ids: Vec<Vec<u32>> = out.iter().map(|h| h.ids.0.clone()).collect();
        assert_eq!(ids, vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0]]);
    }

    #[test]
    fn empty_sequence_decodes_to_empty() {
        let t = EmbeddingTable::generate_synthetic(5, 2, 0, 0.0).unwrap();
        let y = ObfuscatedSequence::new("e", RowMatrix::zeros(0, 2)).unwrap();
        let r = decode(&y, &t, &UniformPrior::new(5).unwrap(), &DecodeConfig::default(), None).unwrap();
        assert!(r.decoded.is_empty());
        assert!(r.theta_trajectory.is_empty());
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let t = EmbeddingTable::generate_synthetic(5, 2, 0, 0.0).unwrap();
        let y = ObfuscatedSequence::new("e", RowMatrix::zeros(1, 2)).unwrap();
        let prior = UniformPrior::new(5).unwrap();
        for cfg in [
            DecodeConfig { beam_width: 0, ..DecodeConfig::default() },
            DecodeConfig { candidate_pool: Some(0), ..DecodeConfig::default() },
            DecodeConfig { candidate_pool: Some(6), ..DecodeConfig::default() },
            DecodeConfig { prior_weight: -1.0, ..DecodeConfig::default() },
        ] {
            assert!(decode(&y, &t, &prior, &cfg, None).is_err());
        }
        let wrong_dim = ObfuscatedSequence::new("e", RowMatrix::zeros(1, 3)).unwrap();
        assert!(matches!(
            decode(&wrong_dim, &t, &prior, &DecodeConfig::default(), None),
            Err(Error::DimensionMismatch { .. })
        ));
        let small_prior = UniformPrior::new(4).unwrap();
        assert!(decode(&y, &t, &small_prior, &DecodeConfig::default(), None).is_err());
    }

    #[test]
    fn zero_noise_is_recovered_exactly() {
        let t = EmbeddingTable::generate_synthetic(40, 8, 2, 0.0).unwrap();
        let w: TokenSequence = vec![4, 4, 39, 0, 17, 5].into();
        let y = ObfuscatedSequence::new("z", t.embed_sequence(&w).unwrap()).unwrap();
        let corpus: Vec<TokenSequence> = vec![vec![1, 2, 3, 1, 2, 3].into()];
        let ngram = train_ngram(&corpus, 2, 0.1, 40).unwrap();
        for prior in [&ngram as &dyn PriorModel, &UniformPrior::new(40).unwrap()] {
            for family in [NoiseFamily::Gaussian, NoiseFamily::Laplace] {
                let cfg = DecodeConfig { family, beam_width: 3, ..DecodeConfig::default() };
                assert_eq!(decode(&y, &t, prior, &cfg, None).unwrap().decoded, w);
            }
        }
    }

    #[test]
    fn greedy_uniform_fixed_equals_nn() {
        let t = EmbeddingTable::generate_synthetic(80, 6, 21, 0.0).unwrap();
        let prior = UniformPrior::new(80).unwrap();
        let w: TokenSequence = (0..12u32).map(|i| (i * 13) % 80).collect::<Vec<_>>().into();
        for (family, norm) in [(NoiseFamily::Gaussian, Norm::L2), (NoiseFamily::Laplace, Norm::L1)] {
            let y = obfuscate_sequence(&t, &w, &NoiseMechanismSpec::new(family, 0.9), 4).unwrap();
            let r = decode(&y, &t, &prior, &fixed(family, 6, 0.9), None).unwrap();
            assert_eq!(r.decoded, nn_decode(&t, &y, norm).unwrap());
            assert!(r.theta_trajectory.iter().all(|th| th.scale == vec![0.9]));
        }
    }

    #[test]
    fn result_is_consistent_and_deterministic() {
        let t = EmbeddingTable::generate_synthetic(25, 4, 6, 0.0).unwrap();
        let ngram = train_ngram(&[vec![0, 1, 2, 3, 4, 0, 1, 2].into()], 2, 0.5, 25).unwrap();
        let w: TokenSequence = vec![0, 1, 2, 3, 4].into();
        let y = obfuscate_sequence(&t, &w, &NoiseMechanismSpec::new(NoiseFamily::Gaussian, 0.8), 10).unwrap();
        let cfg = DecodeConfig { beam_width: 5, candidate_pool: Some(8), ..DecodeConfig::default() };
        let a = decode(&y, &t, &ngram, &cfg, None).unwrap();
        let b = decode(&y, &t, &ngram, &cfg, None).unwrap();
        assert_eq!(a.decoded, b.decoded);
        assert_eq!(a.final_beam, b.final_beam);
        assert_eq!(a.theta_trajectory, b.theta_trajectory);
        assert_eq!(a.decoded, a.final_beam[0].ids);
        assert_eq!(a.theta_trajectory.len(), w.len() + 1);
        assert_eq!(a.step_ms.len(), w.len());
        assert!(a.final_beam.len() <= 5);
        assert!(a.final_beam.windows(2).all(|p| beam_order(&p[0], &p[1]) != Ordering::Greater));
        assert!(a.final_beam.iter().all(|h| h.ids.len() == w.len() && h.log_score.is_finite()));
        assert_eq!(a.decoded_tokens.len(), w.len());
    }

    #[test]
    fn aborts_with_partial_trajectory() {
        struct Failing(usize);
        impl PriorModel for Failing {
            fn vocab_size(&self) -> usize {
                self.0
            }
            fn kind(&self) -> &str {
                "failing"
            }
            fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
                if context.len() >= 2 {
                    Err(Error::Protocol("provider went away".into()))
                } else {
                    Ok(vec![-(self.0 as f64).ln(); self.0])
                }
            }
        }
        let t = EmbeddingTable::generate_synthetic(10, 3, 6, 0.0).unwrap();
        let w: TokenSequence = vec![1, 2, 3, 4].into();
        let y = obfuscate_sequence(&t, &w, &NoiseMechanismSpec::new(NoiseFamily::Gaussian, 0.3), 1).unwrap();
        match decode(&y, &t, &Failing(10), &DecodeConfig::default(), None) {
            Err(Error::Aborted { step, trajectory, source }) => {
                assert_eq!(step, 2);
                assert_eq!(trajectory.len(), 3);
                assert!(matches!(*source, Error::Protocol(_)));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
