//! Nearest-neighbour baseline: every position is decoded on its own to the
//! closest table row.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::ObfuscatedSequence;
use crate::table::{EmbeddingTable, Norm, TokenId, TokenSequence};

/// Index of the row nearest to `y`; ties go to the smaller id.
pub fn nearest_row(table: &EmbeddingTable, y: &[f32], norm: Norm) -> TokenId {
    let mut best = 0;
    let mut best_key = f64::INFINITY;
    for (id, row) in table.vectors().iter_rows().enumerate() {
        let key = norm.rank_key(row, y);
        if key < best_key {
            best_key = key;
            best = id;
        }
    }
    best as TokenId
}

pub fn nn_decode(table: &EmbeddingTable, y: &ObfuscatedSequence, norm: Norm) -> Result<TokenSequence> {
    if y.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: y.dim(),
        });
    }
    let ids = (0..y.len())
        .into_par_iter()
        .map(|t| nearest_row(table, y.row(t), norm))
        .collect();
    Ok(TokenSequence(ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::RowMatrix;
    use proptest::prelude::*;

    fn obf(rows: usize, cols: usize, data: Vec<f32>) -> ObfuscatedSequence {
        ObfuscatedSequence::new("s", RowMatrix::new(rows, cols, data).unwrap()).unwrap()
    }

    fn square() -> EmbeddingTable {
        let m = RowMatrix::new(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        EmbeddingTable::new("sq", m, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn picks_closer_row() {
        let y = obf(1, 2, vec![0.9, 0.1]);
        for norm in [Norm::L1, Norm::L2] {
            assert_eq!(nn_decode(&square(), &y, norm).unwrap().ids(), &[1]);
        }
    }

    #[test]
    fn tie_goes_to_smaller_id() {
        let y = obf(1, 2, vec![0.5, 3.0]);
        for norm in [Norm::L1, Norm::L2] {
            assert_eq!(nn_decode(&square(), &y, norm).unwrap().ids(), &[0]);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let y = obf(1, 3, vec![0.0; 3]);
        assert!(matches!(
            nn_decode(&square(), &y, Norm::L2),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    proptest! {
        #[test]
        fn identity_on_clean_embeddings(
            seed in any::<u64>(),
            ids in proptest::collection::vec(0u32..40, 0..20),
        ) {
            let t = EmbeddingTable::generate_synthetic(40, 6, seed, 0.0).unwrap();
            let w = TokenSequence(ids);
            let x = t.embed_sequence(&w).unwrap();
            let y = ObfuscatedSequence::new("c", x).unwrap();
            for norm in [Norm::L1, Norm::L2] {
                prop_assert_eq!(&nn_decode(&t, &y, norm).unwrap(), &w);
            }
        }

        #[test]
        fn equivariant_under_time_permutation(
            seed in any::<u64>(),
            data in proptest::collection::vec(-3.0f32..3.0, 5 * 4),
            perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let t = EmbeddingTable::generate_synthetic(25, 4, seed, 0.0).unwrap();
            let y = obf(5, 4, data.clone());
            let permuted: Vec<f32> = perm.iter().flat_map(|&p| data[p * 4..(p + 1) * 4].to_vec()).collect();
            let yp = obf(5, 4, permuted);
            let base = nn_decode(&t, &y, Norm::L2).unwrap();
            let moved = nn_decode(&t, &yp, Norm::L2).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(moved.ids()[i], base.ids()[p]);
            }
        }
    }
}
