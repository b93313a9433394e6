//! Bias-revealing sentence-pair properties and balanced probing datasets.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{tokenize, NluDataset, SentencePair, Split};

#[derive(Debug, Error)]
pub enum ProbingError {
    #[error("dataset {0} is empty")]
    EmptyDataset(String),
    #[error("property {property} is degenerate on {dataset}: {positives} positive, {negatives} negative")]
    Degenerate {
        property: String,
        dataset: String,
        positives: usize,
        negatives: usize,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Negative-word vocabulary for the negation property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegWordList {
    pub words: BTreeSet<String>,
    /// Any token ending in `n't` also counts as negative.
    pub nt_suffix_rule: bool,
}

impl Default for NegWordList {
    fn default() -> Self {
        let words = [
            "no", "not", "nobody", "never", "nothing", "none", "empty", "neither", "cannot",
        ];
        Self {
            words: words.iter().map(|w| w.to_string()).collect(),
            nt_suffix_rule: true,
        }
    }
}

impl NegWordList {
    pub fn is_negative(&self, token: &str) -> bool {
        self.words.contains(token) || (self.nt_suffix_rule && token.ends_with("n't"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProbingProperty {
    NegWords(NegWordList),
    Overlap,
    Subsequence,
}

impl ProbingProperty {
    pub fn negwords() -> Self {
        ProbingProperty::NegWords(NegWordList::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProbingProperty::NegWords(_) => "negwords",
            ProbingProperty::Overlap => "overlap",
            ProbingProperty::Subsequence => "subsequence",
        }
    }

    pub fn eval(&self, pair: &SentencePair) -> u8 {
        match self {
            ProbingProperty::NegWords(list) => eval_negwords(pair, list),
            ProbingProperty::Overlap => eval_overlap(pair),
            ProbingProperty::Subsequence => eval_subsequence(pair),
        }
    }
}

impl fmt::Display for ProbingProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbingProperty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "negwords" | "neg" => Ok(Self::negwords()),
            "overlap" | "lex" => Ok(ProbingProperty::Overlap),
            "subsequence" | "sub" => Ok(ProbingProperty::Subsequence),
            other => Err(format!(
                "unknown task {other:?} (expected negwords, overlap or subsequence)"
            )),
        }
    }
}

/// 1 iff the hypothesis contains a negative word. The premise is ignored.
pub fn eval_negwords(pair: &SentencePair, list: &NegWordList) -> u8 {
    tokenize(&pair.hypothesis)
        .iter()
        .any(|t| list.is_negative(t)) as u8
}

/// 1 iff every hypothesis token also occurs in the premise (set containment).
pub fn eval_overlap(pair: &SentencePair) -> u8 {
    let hypothesis = tokenize(&pair.hypothesis);
    if hypothesis.is_empty() {
        return 0;
    }
    let premise: HashSet<String> = tokenize(&pair.premise).into_iter().collect();
    hypothesis.iter().all(|t| premise.contains(t)) as u8
}

/// 1 iff the hypothesis tokens appear as a contiguous run in the premise.
pub fn eval_subsequence(pair: &SentencePair) -> u8 {
    let hypothesis = tokenize(&pair.hypothesis);
    let premise = tokenize(&pair.premise);
    is_contiguous_run(&premise, &hypothesis) as u8
}

pub(crate) fn is_contiguous_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingExample {
    pub source_id: u64,
    pub prop_label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingCounts {
    /// Pairs in the base dataset.
    pub source_pairs: usize,
    /// Positive pairs in the base dataset.
    pub source_positives: usize,
    pub positives: usize,
    pub negatives: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbingDataset {
    pub property: ProbingProperty,
    pub base_dataset: String,
    pub split: Split,
    pub seed: u64,
    pub counts: ProbingCounts,
    #[serde(skip)]
    pub examples: Vec<ProbingExample>,
}

/// Indices of a balanced subset of `labels`: every minority-class index plus
/// an equal-size seeded sample of the majority class, returned ascending.
///
/// Returns `None` when one class is absent. Exact ties keep everything.
pub fn balanced_subsample(labels: &[u8], seed: u64) -> Option<Vec<usize>> {
    let (positives, negatives): (Vec<usize>, Vec<usize>) =
        (0..labels.len()).partition(|&i| labels[i] == 1);
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let (minority, majority) = if positives.len() <= negatives.len() {
        (positives, negatives)
    } else {
        (negatives, positives)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, majority.len(), minority.len());
    let mut keep: Vec<usize> = minority;
    keep.extend(picked.iter().map(|i| majority[i]));
    keep.sort_unstable();
    Some(keep)
}

pub fn build_probing_dataset(
    ds: &NluDataset,
    property: &ProbingProperty,
    seed: u64,
) -> Result<ProbingDataset, ProbingError> {
    if ds.pairs.is_empty() {
        return Err(ProbingError::EmptyDataset(ds.name.clone()));
    }
    let labels: Vec<u8> = ds.pairs.par_iter().map(|p| property.eval(p)).collect();
    let source_positives = labels.iter().filter(|&&l| l == 1).count();
    let keep = balanced_subsample(&labels, seed).ok_or_else(|| ProbingError::Degenerate {
        property: property.name().to_string(),
        dataset: format!("{}/{}", ds.name, ds.split),
        positives: source_positives,
        negatives: labels.len() - source_positives,
    })?;
    let examples: Vec<ProbingExample> = keep
        .iter()
        .map(|&i| ProbingExample {
            source_id: ds.pairs[i].id,
            prop_label: labels[i],
        })
        .collect();
    let positives = examples.iter().filter(|e| e.prop_label == 1).count();
    Ok(ProbingDataset {
        property: property.clone(),
        base_dataset: ds.name.clone(),
        split: ds.split,
        seed,
        counts: ProbingCounts {
            source_pairs: labels.len(),
            source_positives,
            positives,
            negatives: examples.len() - positives,
            total: examples.len(),
        },
        examples,
    })
}

impl ProbingDataset {
    /// Writes `<stem>.jsonl` and the sidecar `<stem>.manifest.json`.
    pub fn write(&self, jsonl_path: &Path, manifest_path: &Path) -> Result<(), ProbingError> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| ProbingError::Io { path, source }
        };
        let mut out = BufWriter::new(File::create(jsonl_path).map_err(io_err(jsonl_path))?);
        for example in &self.examples {
            let line = serde_json::to_string(example).expect("plain struct serializes");
            writeln!(out, "{line}").map_err(io_err(jsonl_path))?;
        }
        out.flush().map_err(io_err(jsonl_path))?;
        let manifest = serde_json::to_string_pretty(self).expect("plain struct serializes");
        std::fs::write(manifest_path, manifest + "\n").map_err(io_err(manifest_path))
    }
}

pub fn read_probing_jsonl(path: &Path) -> Result<Vec<ProbingExample>, ProbingError> {
    let file = File::open(path).map_err(|source| ProbingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_probing_jsonl(BufReader::new(file))
}

/// Parses `{source_id, prop_label}` lines; rejects non-binary labels and
/// repeated ids.
pub fn parse_probing_jsonl<R: BufRead>(reader: R) -> Result<Vec<ProbingExample>, ProbingError> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| ProbingError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let example: ProbingExample =
            serde_json::from_str(&line).map_err(|e| ProbingError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if example.prop_label > 1 {
            return Err(ProbingError::Parse {
                line: line_no,
                reason: format!("prop_label {} is not binary", example.prop_label),
            });
        }
        if !seen.insert(example.source_id) {
            return Err(ProbingError::Parse {
                line: line_no,
                reason: format!("duplicate source_id {}", example.source_id),
            });
        }
        examples.push(example);
    }
    Ok(examples)
}
