//! Autoregressive priors `p(w_t | w_1..w_{t-1})` over a vocabulary.

mod external;
mod mapped;
mod ngram;
mod token_map;

pub use external::{serve_prior, ExternalPrior, DEFAULT_TIMEOUT_MS};
pub use mapped::MappedPrior;
pub use ngram::{train_ngram, NgramPrior};
pub use token_map::{build_token_map, TokenMap, TokenMapStats};

use crate::error::{Error, Result};
use crate::table::TokenId;

/// A prior returns a full, normalised log-probability vector for the next
/// token given a context (possibly empty for the first position).
pub trait PriorModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn kind(&self) -> &str;

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>>;
}

impl<P: PriorModel + ?Sized> PriorModel for Box<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn kind(&self) -> &str {
        (**self).kind()
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_token_logprobs(context)
    }
}

/// Every token at `-ln V`, whatever the context.
#[derive(Debug, Clone, Copy)]
pub struct UniformPrior {
    vocab_size: usize,
}

impl UniformPrior {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("uniform prior needs V >= 1"));
        }
        Ok(Self { vocab_size })
    }
}

pub fn uniform_logprobs(vocab_size: usize) -> Vec<f64> {
    vec![-(vocab_size as f64).ln(); vocab_size]
}

impl PriorModel for UniformPrior {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn kind(&self) -> &str {
        "uniform"
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        Ok(uniform_logprobs(self.vocab_size))
    }
}

pub(crate) fn check_context(context: &[TokenId], vocab_size: usize) -> Result<()> {
    match context.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size }),
        None => Ok(()),
    }
}

/// Overflow-free `ln(sum(exp(v)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_values() {
        assert_eq!(uniform_logprobs(1), vec![0.0]);
        let v = uniform_logprobs(4);
        assert_eq!(v, vec![-(4f64.ln()); 4]);
        assert!(log_sum_exp(&v).abs() < 1e-15);
        let p = UniformPrior::new(4).unwrap();
        assert_eq!(p.next_token_logprobs(&[3, 1]).unwrap(), v);
        assert!(p.next_token_logprobs(&[4]).is_err());
        assert!(UniformPrior::new(0).is_err());
    }

    #[test]
    fn lse_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let a = -1234.5;
        assert!((log_sum_exp(&[a, a]) - (a + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[1000.0, 0.0]) - 1000.0).abs() < 1e-12);
    }
}
