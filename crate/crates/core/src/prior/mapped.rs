use std::sync::atomic::{AtomicU64, Ordering};

use super::{check_context, log_sum_exp, PriorModel};
use crate::error::{Error, Result};
use crate::prior::TokenMap;
use crate::table::TokenId;

/// Presents a prior over another vocabulary as a prior over the attacker's
/// (source) vocabulary.
///
/// Contexts are translated through the token map with unmappable positions
/// dropped. A mapped source token takes the destination probability of its
/// image; an unmapped one takes `1 / V_dst`. The result is renormalised over
/// the source vocabulary.
pub struct MappedPrior<'a, P: PriorModel + ?Sized> {
    inner: &'a P,
    map: &'a TokenMap,
    dropped: AtomicU64,
}

impl<'a, P: PriorModel + ?Sized> MappedPrior<'a, P> {
    pub fn new(inner: &'a P, map: &'a TokenMap) -> Result<Self> {
        if inner.vocab_size() != map.dst_vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: map.dst_vocab_size(),
                actual: inner.vocab_size(),
            });
        }
        Ok(Self {
            inner,
            map,
            dropped: AtomicU64::new(0),
        })
    }

    /// Context positions dropped so far because they had no image.
    pub fn dropped_positions(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl<P: PriorModel + ?Sized> PriorModel for MappedPrior<'_, P> {
    fn vocab_size(&self) -> usize {
        self.map.src_vocab_size()
    }

    fn kind(&self) -> &str {
        "mapped"
    }

    fn next_token_logprobs(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_context(context, self.vocab_size())?;
        let (translated, dropped) = self.map.translate_context(context);
        self.dropped.fetch_add(dropped as u64, Ordering::Relaxed);
        let dst = self.inner.next_token_logprobs(translated.ids())?;
        let fallback = -(self.map.dst_vocab_size() as f64).ln();
        let mut out: Vec<f64> = (0..self.vocab_size() as TokenId)
            .map(|src| match self.map.get(src) {
                Some(d) => dst[d as usize],
                None => fallback,
            })
            .collect();
        let z = log_sum_exp(&out);
        if !z.is_finite() {
            return Err(Error::Numerical("mapped prior has no probability mass".into()));
        }
        out.iter_mut().for_each(|v| *v -= z);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{build_token_map, train_ngram};
    use crate::table::{EmbeddingTable, RowMatrix};

    fn table(tokens: &[&str]) -> EmbeddingTable {
        let n = tokens.len();
        let m = RowMatrix::new(n, 1, (0..n).map(|i| i as f32).collect()).unwrap();
        EmbeddingTable::new("t", m, tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn identity_map_is_transparent() {
        let t = table(&["a", "b", "c"]);
        let map = build_token_map(&t, &t, None);
        let p = train_ngram(&[vec![0, 1, 2, 1].into()], 2, 0.3, 3).unwrap();
        let mp = MappedPrior::new(&p, &map).unwrap();
        for ctx in [&[][..], &[1][..], &[0, 2][..]] {
            let a = mp.next_token_logprobs(ctx).unwrap();
            let b = p.next_token_logprobs(ctx).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(mp.dropped_positions(), 0);
    }

    #[test]
    fn unmapped_tokens_get_fallback_mass_and_drops_are_counted() {
        let src = table(&["a", "b", "z"]);
        let dst = table(&["b", "a"]);
        let map = build_token_map(&src, &dst, None);
        let p = train_ngram(&[vec![1, 0, 0].into()], 2, 1.0, 2).unwrap();
        let mp = MappedPrior::new(&p, &map).unwrap();
        let lp = mp.next_token_logprobs(&[2, 0]).unwrap();
        assert_eq!(mp.dropped_positions(), 1);
        assert!(log_sum_exp(&lp).abs() < 1e-12);
        // Context [a] maps to dst [1]: p(b|a) = (1+1)/(1+2), p(a|a) = 1/3; z gets 1/2 before renormalising.
        let raw = [1.0 / 3.0, 2.0 / 3.0, 0.5];
        let total: f64 = raw.iter().sum();
        for (v, r) in lp.iter().zip(raw) {
            assert!((v - (r / total).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let t = table(&["a", "b"]);
        let map = build_token_map(&t, &t, None);
        let p = train_ngram(&[vec![0].into()], 1, 1.0, 5).unwrap();
        assert!(MappedPrior::new(&p, &map).is_err());
    }
}
