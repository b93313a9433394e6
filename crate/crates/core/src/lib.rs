//! Measuring how extractable dataset biases are from model representations.
//!
//! - [`dataset`]: SNLI/MNLI/FEVER sentence-pair loading and tokenization.
//! - [`probing`]: bias properties (negation words, lexical overlap,
//!   subsequence) and balanced probing datasets.
//! - [`repr`]: the RPRB representation container and the probe join.
//! - [`mdl`]: linear probes and online-code description length.
//! - [`lab`]: a small-scale debiasing testbed (CE, DFL, PoE, ConfReg).
//! - [`analysis`]: robustness/extractability correlations and γ sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dataset;
pub mod digest;
pub mod lab;
pub mod mdl;
pub mod probing;
pub mod repr;

pub use dataset::{load_nlu_jsonl, tokenize, LabelSpace, NluDataset, Schema, SentencePair, Split};
pub use mdl::{
    compression, online_code, probe_logprob, train_probe, LinearProbe, OnlineCodeConfig,
    ProbeReport,
};
pub use probing::{build_probing_dataset, ProbingDataset, ProbingExample, ProbingProperty};
pub use repr::{join, read_repr, write_repr, ProbeInput, ReprMatrix};
