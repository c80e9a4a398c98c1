use std::collections::HashSet;

use serde::Serialize;

use crate::table::{EmbeddingTable, TokenId, TokenSequence};

/// Injective partial map from a source vocabulary to a destination one,
/// matched on byte-identical token strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap {
    forward: Vec<Option<TokenId>>,
    dst_vocab_size: usize,
    restricted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TokenMapStats {
    pub src_vocab_size: usize,
    pub dst_vocab_size: usize,
    pub mapped: usize,
    pub unmapped: usize,
    pub empty: bool,
}

/// Maps `src` ids onto `dst` ids whose token strings are byte-identical.
/// With `restrict_to`, only strings in the allow-set are mapped and the map is
/// flagged as restricted, which limits decoding to mapped tokens.
pub fn build_token_map(
    src: &EmbeddingTable,
    dst: &EmbeddingTable,
    restrict_to: Option<&HashSet<String>>,
) -> TokenMap {
    let forward = src
        .tokens()
        .iter()
        .map(|tok| {
            if restrict_to.is_some_and(|allow| !allow.contains(tok)) {
                return None;
            }
            dst.id_of(tok)
        })
        .collect();
    TokenMap {
        forward,
        dst_vocab_size: dst.vocab_size(),
        restricted: restrict_to.is_some(),
    }
}

impl TokenMap {
    pub fn with_restricted(mut self, restricted: bool) -> Self {
        self.restricted = restricted;
        self
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    pub fn src_vocab_size(&self) -> usize {
        self.forward.len()
    }

    pub fn dst_vocab_size(&self) -> usize {
        self.dst_vocab_size
    }

    pub fn get(&self, src: TokenId) -> Option<TokenId> {
        self.forward.get(src as usize).copied().flatten()
    }

    pub fn is_mapped(&self, src: TokenId) -> bool {
        self.get(src).is_some()
    }

    pub fn unmapped(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.forward
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_none())
            .map(|(i, _)| i as TokenId)
    }

    pub fn stats(&self) -> TokenMapStats {
        let mapped = self.forward.iter().filter(|m| m.is_some()).count();
        TokenMapStats {
            src_vocab_size: self.forward.len(),
            dst_vocab_size: self.dst_vocab_size,
            mapped,
            unmapped: self.forward.len() - mapped,
            empty: mapped == 0,
        }
    }

    /// Maps a source context into the destination vocabulary, dropping
    /// unmappable positions; returns the translation and the drop count.
    pub fn translate_context(&self, context: &[TokenId]) -> (TokenSequence, usize) {
        let ids: Vec<TokenId> = context.iter().filter_map(|&id| self.get(id)).collect();
        let dropped = context.len() - ids.len();
        (TokenSequence(ids), dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::RowMatrix;

    fn table(tokens: &[&str]) -> EmbeddingTable {
        let n = tokens.len();
        let m = RowMatrix::new(n, 1, (0..n).map(|i| i as f32).collect()).unwrap();
        EmbeddingTable::new("t", m, tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn identical_tables_give_identity() {
        let t = table(&["x", "y", "z"]);
        let m = build_token_map(&t, &t, None);
        assert_eq!((0..3).map(|i| m.get(i)).collect::<Vec<_>>(), vec![Some(0), Some(1), Some(2)]);
        assert_eq!(m.stats().mapped, 3);
        assert!(!m.is_restricted());
    }

    #[test]
    fn disjoint_tables_give_empty_map() {
        let m = build_token_map(&table(&["a", "b"]), &table(&["c", "d"]), None);
        assert!(m.stats().empty);
        let (ctx, dropped) = m.translate_context(&[0, 1, 1]);
        assert!(ctx.is_empty());
        assert_eq!(dropped, 3);
    }

    #[test]
    fn string_intersection() {
        let m = build_token_map(&table(&["a", "b"]), &table(&["b", "c"]), None);
        assert_eq!(m.get(0), None);
        assert_eq!(m.get(1), Some(0));
        assert_eq!(m.unmapped().collect::<Vec<_>>(), vec![0]);
        let (ctx, dropped) = m.translate_context(&[0, 1]);
        assert_eq!(ctx.ids(), &[0]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn allow_set_restricts() {
        let src = table(&["a", "b", "c"]);
        let dst = table(&["c", "b", "a"]);
        let allow: HashSet<String> = ["a", "c"].iter().map(|s| s.to_string()).collect();
        let m = build_token_map(&src, &dst, Some(&allow));
        assert!(m.is_restricted());
        assert_eq!(m.get(0), Some(2));
        assert_eq!(m.get(1), None);
        assert_eq!(m.get(2), Some(0));
    }

    #[test]
    fn byte_exact_matching() {
        let m = build_token_map(&table(&["Ġthe", "the"]), &table(&["the", "The"]), None);
        assert_eq!(m.get(0), None);
        assert_eq!(m.get(1), Some(0));
    }

    #[test]
    fn injective() {
        let src = table(&["a", "b", "c", "d", "e"]);
        let dst = table(&["e", "q", "c", "a"]);
        let m = build_token_map(&src, &dst, None);
        let mut seen = HashSet::new();
        for i in 0..5 {
            if let Some(d) = m.get(i) {
                assert!(seen.insert(d));
                assert!((d as usize) < dst.vocab_size());
            }
        }
        assert_eq!(seen.len(), 3);
    }
}
