use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_context, PriorModel};
use crate::error::{Error, Result};
use crate::table::{TokenId, TokenSequence};

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Add-alpha smoothed n-gram model with backoff to the longest seen suffix.
///
/// For a query context the last `order - 1` tokens are shortened from the left
/// until the remaining context was observed in training (the empty context
/// always qualifies), then
/// `p(w | ctx) = (count(ctx, w) + alpha) / (count(ctx) + alpha * V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramPrior {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    contexts: HashMap<Vec<TokenId>, ContextCounts>,
}

pub fn train_ngram(
    corpus: &[TokenSequence],
    order: usize,
    alpha: f64,
    vocab_size: usize,
) -> Result<NgramPrior> {
    if order == 0 {
        return Err(Error::invalid("n-gram order must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("vocabulary must be non-empty"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train an n-gram prior on an empty corpus"));
    }
    let mut contexts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    for seq in corpus {
        seq.validate(vocab_size)?;
        let ids = seq.ids();
        for (i, &w) in ids.iter().enumerate() {
            for k in 0..=i.min(order - 1) {
                let entry = contexts.entry(ids[i - k..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(w).or_insert(0) += 1;
            }
        }
    }
    Ok(NgramPrior {
        order,
        alpha,
        vocab_size,
        contexts,
    })
}

impl NgramPrior {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Raw count of `ctx` followed by `w`.
    pub fn count(&self, ctx: &[TokenId], w: TokenId) -> u64 {
        self.contexts
            .get(ctx)
            .and_then(|c| c.next.get(&w))
            .copied()
            .unwrap_or(0)
    }

    /// The context actually used for `context` after backoff.
    pub fn backoff_context<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        while !ctx.is_empty() && !self.contexts.contains_key(ctx) {
            ctx = &ctx[1..];
        }
        ctx
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &NgramFile::from(self))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: NgramFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.try_into()
    }
}

impl PriorModel for NgramPrior {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn kind(&self) -> &str {
        "ngram"
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size)?;
        let ctx = self.backoff_context(context);
        let v = self.vocab_size as f64;
        let (total, next) = match self.contexts.get(ctx) {
            Some(c) => (c.total as f64, Some(&c.next)),
            None => (0.0, None),
        };
        let log_denom = (total + self.alpha * v).ln();
        let base = self.alpha.ln() - log_denom;
        let mut out = vec![base; self.vocab_size];
        if let Some(next) = next {
            for (&w, &c) in next {
                out[w as usize] = (c as f64 + self.alpha).ln() - log_denom;
            }
        }
        Ok(out)
    }
}

/// On-disk JSON layout, contexts sorted for byte-stable output.
#[derive(Serialize, Deserialize)]
struct NgramFile {
    kind: String,
    order: usize,
    alpha: f64,
    vocab_size: usize,
    contexts: Vec<ContextEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl From<&NgramPrior> for NgramFile {
    fn from(p: &NgramPrior) -> Self {
        let sorted: BTreeMap<&Vec<TokenId>, &ContextCounts> = p.contexts.iter().collect();
        let contexts = sorted
            .into_iter()
            .map(|(ctx, counts)| {
                let mut next: Vec<(TokenId, u64)> = counts.next.iter().map(|(&w, &c)| (w, c)).collect();
                next.sort_unstable();
                ContextEntry {
                    context: ctx.clone(),
                    next,
                }
            })
            .collect();
        NgramFile {
            kind: "ngram".into(),
            order: p.order,
            alpha: p.alpha,
            vocab_size: p.vocab_size,
            contexts,
        }
    }
}

impl TryFrom<NgramFile> for NgramPrior {
    type Error = Error;

    fn try_from(f: NgramFile) -> Result<Self> {
        if f.kind != "ngram" || f.order == 0 || f.alpha.is_nan() || f.alpha <= 0.0 || f.vocab_size == 0 {
            return Err(Error::Format("not a valid n-gram prior file".into()));
        }
        let mut contexts = HashMap::with_capacity(f.contexts.len());
        for entry in f.contexts {
            check_context(&entry.context, f.vocab_size)?;
            let mut counts = ContextCounts::default();
            for (w, c) in entry.next {
                check_context(&[w], f.vocab_size)?;
                counts.total += c;
                counts.next.insert(w, c);
            }
            contexts.insert(entry.context, counts);
        }
        Ok(NgramPrior {
            order: f.order,
            alpha: f.alpha,
            vocab_size: f.vocab_size,
            contexts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::log_sum_exp;
    use proptest::prelude::*;

    // a=0, b=1
    fn abab() -> NgramPrior {
        train_ngram(&[vec![0, 1, 0, 1].into()], 2, 1.0, 2).unwrap()
    }

    #[test]
    fn bigram_hand_counts() {
        let p = abab();
        assert_eq!(p.count(&[0], 1), 2);
        assert_eq!(p.count(&[0], 0), 0);
        let lp = p.next_token_logprobs(&[0]).unwrap();
        assert!((lp[1] - 0.75f64.ln()).abs() < 1e-15);
        assert!((lp[0] - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_context_is_unigram() {
        let p = abab();
        // Two a's and two b's: (2+1)/(4+2) each.
        let lp = p.next_token_logprobs(&[]).unwrap();
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((lp[1] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unseen_context_backs_off() {
        // "b" is never followed by anything in "a b", so context [b] backs off to the unigram.
        let p = train_ngram(&[vec![0, 1].into()], 2, 1.0, 3).unwrap();
        assert_eq!(p.backoff_context(&[1]), &[] as &[u32]);
        assert_eq!(p.next_token_logprobs(&[1]).unwrap(), p.next_token_logprobs(&[]).unwrap());
        // Trigram model: context [2, 0] unseen, [0] seen.
        let p = train_ngram(&[vec![0, 1, 0, 2].into()], 3, 0.5, 3).unwrap();
        assert_eq!(p.backoff_context(&[2, 0]), &[0]);
        assert_eq!(p.backoff_context(&[1, 0]), &[1, 0]);
    }

    #[test]
    fn huge_alpha_flattens() {
        let p = train_ngram(&[vec![0, 0, 0, 1, 2, 0].into()], 1, 1e6, 3).unwrap();
        for lp in p.next_token_logprobs(&[0]).unwrap() {
            assert!((lp.exp() * 3.0 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn training_errors() {
        assert!(train_ngram(&[], 2, 1.0, 2).is_err());
        assert!(train_ngram(&[vec![0].into()], 0, 1.0, 2).is_err());
        assert!(train_ngram(&[vec![0].into()], 2, 0.0, 2).is_err());
        assert!(matches!(
            train_ngram(&[vec![5].into()], 2, 1.0, 2),
            Err(Error::TokenOutOfRange { id: 5, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = train_ngram(&[vec![0, 1, 2, 1, 0].into(), vec![2, 2].into()], 3, 0.1, 4).unwrap();
        p.save(&path).unwrap();
        let q = NgramPrior::load(&path).unwrap();
        assert_eq!(p, q);
        let first = std::fs::read(&path).unwrap();
        q.save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    proptest! {
        #[test]
        fn normalised_positive_and_deterministic(
            corpus in proptest::collection::vec(proptest::collection::vec(0u32..12, 0..15), 1..6),
            context in proptest::collection::vec(0u32..12, 0..6),
            order in 1usize..5,
            alpha in 0.01f64..3.0,
        ) {
            let seqs: Vec<TokenSequence> = corpus.into_iter().map(TokenSequence).collect();
            let p = train_ngram(&seqs, order, alpha, 12).unwrap();
            let lp = p.next_token_logprobs(&context).unwrap();
            prop_assert!(log_sum_exp(&lp).abs() < 1e-6);
            prop_assert!(lp.iter().all(|v| v.is_finite()));
            prop_assert_eq!(lp, p.next_token_logprobs(&context).unwrap());
        }
    }
}
