//! Desk-scale debiasing testbed: synthetic biased data, small feed-forward
//! main and bias models, four training objectives, and representation export.

pub mod experiment;
pub mod loss;
pub mod model;
pub mod synth;
pub mod train;

use std::collections::HashSet;

use ndarray::ArrayView2;
use thiserror::Error;

use crate::dataset::{tokenize, SentencePair};
use crate::probing::{eval_overlap, eval_subsequence};
use crate::repr::{ReprError, ReprMatrix};

pub use loss::{confreg_scale, loss_ce, loss_confreg, loss_dfl, loss_poe, Loss};
pub use model::ToyModel;
pub use synth::{gen_synthetic, SyntheticBiasConfig, SyntheticData, SyntheticSplit};
pub use train::{train_toy, BiasModelKind, DebiasObjective, TrainHyper, TrainedToy};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Mdl(#[from] crate::mdl::MdlError),
    #[error(transparent)]
    Join(#[from] crate::repr::JoinError),
}

/// Last-hidden-layer activations for each row, labeled with `prop_labels`.
pub fn extract_reprs(
    model: &ToyModel,
    rows: ArrayView2<f64>,
    ids: &[u64],
    prop_labels: &[u32],
    k: u32,
) -> Result<ReprMatrix, LabError> {
    if ids.len() != rows.nrows() || prop_labels.len() != rows.nrows() {
        return Err(LabError::Shape(format!(
            "{} rows, {} ids, {} labels",
            rows.nrows(),
            ids.len(),
            prop_labels.len()
        )));
    }
    let forward = model.forward_batch(rows)?;
    let repr = forward.repr();
    let data = repr.iter().map(|&v| v as f32).collect();
    Ok(ReprMatrix::new(
        ids.to_vec(),
        prop_labels.to_vec(),
        k,
        repr.ncols(),
        data,
    )?)
}

/// Explicit lexical bias features of a sentence pair: full overlap,
/// contiguous subsequence, and the fraction of premise tokens that also
/// occur in the hypothesis.
pub fn lexical_bias_features(pair: &SentencePair) -> [f64; 3] {
    let premise = tokenize(&pair.premise);
    let hypothesis: HashSet<String> = tokenize(&pair.hypothesis).into_iter().collect();
    let shared = if premise.is_empty() {
        0.0
    } else {
        premise.iter().filter(|t| hypothesis.contains(*t)).count() as f64 / premise.len() as f64
    };
    [
        eval_overlap(pair) as f64,
        eval_subsequence(pair) as f64,
        shared,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pair(p: &str, h: &str) -> SentencePair {
        SentencePair {
            id: 0,
            premise: p.into(),
            hypothesis: h.into(),
            label: 0,
            pair_id: None,
        }
    }

    #[test]
    fn lexical_features() {
        assert_eq!(
            lexical_bias_features(&pair("a b c", "a b c")),
            [1.0, 1.0, 1.0]
        );
        assert_eq!(
            lexical_bias_features(&pair("a b c d", "a c")),
            [1.0, 0.0, 0.5]
        );
        assert_eq!(lexical_bias_features(&pair("a b", "c d")), [0.0, 0.0, 0.0]);
        assert_eq!(lexical_bias_features(&pair("", "c d")), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn extract_shapes() {
        let model = ToyModel::new(&[3, 5, 2], 0).unwrap();
        let rows = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let m = extract_reprs(&model, rows.view(), &[0, 1, 2, 3], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!((m.n(), m.d()), (4, 5));

        let identity = ToyModel::new(&[3, 2], 0).unwrap();
        let m = extract_reprs(&identity, rows.view(), &[0, 1, 2, 3], &[0, 1, 0, 1], 2).unwrap();
        let expected: Vec<f32> = rows.iter().map(|&v| v as f32).collect();
        assert_eq!(m.data(), &expected[..]);

        let other = ToyModel::new(&[3, 5, 2], 1).unwrap();
        let a = extract_reprs(&model, rows.view(), &[0, 1, 2, 3], &[0; 4], 2).unwrap();
        let b = extract_reprs(&other, rows.view(), &[0, 1, 2, 3], &[0; 4], 2).unwrap();
        assert_ne!(a.data(), b.data());

        assert!(extract_reprs(&model, rows.view(), &[0], &[0], 2).is_err());
    }
}
