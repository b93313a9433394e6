//! Sentence-pair NLU datasets (SNLI, MNLI, FEVER) in a uniform in-memory form.
//!
//! Every loader assigns ids from zero in input-line order, counting only the
//! retained lines, so a given file always produces the same ids.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Label {
        line: usize,
        #[source]
        source: LabelError,
    },
    #[error("dataset {0} has no retained sentence pairs")]
    Empty(String),
    #[error("{0} does not provide a test split")]
    NoTestSplit(&'static str),
    #[error("invalid label space: {0}")]
    LabelSpace(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label {raw:?}")]
pub struct LabelError {
    pub raw: String,
}

/// Ordered set of class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, DatasetError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(DatasetError::LabelSpace(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(DatasetError::LabelSpace(format!("label {i} is empty")));
            }
            if names[..i].contains(name) {
                return Err(DatasetError::LabelSpace(format!(
                    "duplicate label {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn nli() -> Self {
        Self {
            names: vec![
                "entailment".into(),
                "contradiction".into(),
                "neutral".into(),
            ],
        }
    }

    pub fn fever() -> Self {
        Self {
            names: vec![
                "SUPPORTS".into(),
                "REFUTES".into(),
                "NOT ENOUGH INFO".into(),
            ],
        }
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    /// Case-insensitive exact match; surrounding whitespace is not trimmed.
    pub fn map_label(&self, raw: &str) -> Result<usize, LabelError> {
        self.names
            .iter()
            .position(|name| name.to_lowercase() == raw.to_lowercase())
            .ok_or_else(|| LabelError {
                raw: raw.to_string(),
            })
    }
}

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Snli,
    Mnli,
    Fever,
}

impl Schema {
    pub fn name(self) -> &'static str {
        match self {
            Schema::Snli => "snli",
            Schema::Mnli => "mnli",
            Schema::Fever => "fever",
        }
    }

    pub fn label_space(self) -> LabelSpace {
        match self {
            Schema::Snli | Schema::Mnli => LabelSpace::nli(),
            Schema::Fever => LabelSpace::fever(),
        }
    }

    fn fields(self) -> (&'static str, &'static str, &'static str) {
        match self {
            Schema::Snli | Schema::Mnli => ("sentence1", "sentence2", "gold_label"),
            Schema::Fever => ("evidence", "claim", "label"),
        }
    }

    /// SNLI and MNLI mark pairs without annotator consensus with `-`.
    fn skips_no_consensus(self) -> bool {
        !matches!(self, Schema::Fever)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "snli" => Ok(Schema::Snli),
            "mnli" => Ok(Schema::Mnli),
            "fever" => Ok(Schema::Fever),
            other => Err(format!(
                "unknown schema {other:?} (expected snli, mnli or fever)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, valid or test)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: u64,
    /// Premise (NLI) or evidence (FEVER).
    pub premise: String,
    /// Hypothesis (NLI) or claim (FEVER).
    pub hypothesis: String,
    pub label: usize,
    /// Identifier carried by the source file, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluDataset {
    pub name: String,
    pub split: Split,
    pub label_space: LabelSpace,
    pub pairs: Vec<SentencePair>,
    /// Lines read from the source, including skipped ones.
    pub total_lines: usize,
    /// Lines dropped: no-consensus labels and blank lines.
    pub skipped_lines: usize,
}

impl NluDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Loads a JSONL dataset file.
pub fn load_nlu_jsonl(
    path: impl AsRef<Path>,
    schema: Schema,
    split: Split,
) -> Result<NluDataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_nlu_jsonl(BufReader::new(file), schema, split).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Parses JSONL records from any reader.
pub fn parse_nlu_jsonl<R: BufRead>(
    reader: R,
    schema: Schema,
    split: Split,
) -> Result<NluDataset, DatasetError> {
    if schema == Schema::Fever && split == Split::Test {
        return Err(DatasetError::NoTestSplit("fever"));
    }
    let label_space = schema.label_space();
    let mut pairs = Vec::new();
    let mut total_lines = 0;
    let mut skipped_lines = 0;
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: String::from("<reader>"),
            source,
        })?;
        total_lines += 1;
        if line.trim().is_empty() {
            skipped_lines += 1;
            continue;
        }
        match parse_record(&line, line_no, schema, &label_space)? {
            Some((premise, hypothesis, label, pair_id)) => pairs.push(SentencePair {
                id: pairs.len() as u64,
                premise,
                hypothesis,
                label,
                pair_id,
            }),
            None => skipped_lines += 1,
        }
    }
    let name = schema.name().to_string();
    log::debug!(
        "{name}/{split}: kept {} of {total_lines} lines",
        pairs.len()
    );
    if pairs.is_empty() {
        return Err(DatasetError::Empty(name));
    }
    Ok(NluDataset {
        name,
        split,
        label_space,
        pairs,
        total_lines,
        skipped_lines,
    })
}

type Record = (String, String, usize, Option<String>);

fn parse_record(
    line: &str,
    line_no: usize,
    schema: Schema,
    space: &LabelSpace,
) -> Result<Option<Record>, DatasetError> {
    let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
        line: line_no,
        reason: e.to_string(),
    })?;
    let object = value.as_object().ok_or_else(|| DatasetError::Parse {
        line: line_no,
        reason: "expected a JSON object".into(),
    })?;
    let (premise_key, hypothesis_key, label_key) = schema.fields();
    let field = |key: &str| -> Result<String, DatasetError> {
        match object.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(DatasetError::Parse {
                line: line_no,
                reason: format!("field {key:?} is not a string"),
            }),
            None => Err(DatasetError::Parse {
                line: line_no,
                reason: format!("missing field {key:?}"),
            }),
        }
    };
    let raw_label = field(label_key)?;
    if schema.skips_no_consensus() && raw_label == "-" {
        return Ok(None);
    }
    let label = space
        .map_label(&raw_label)
        .map_err(|source| DatasetError::Label {
            line: line_no,
            source,
        })?;
    let pair_id = match object.get("pairID").or_else(|| object.get("id")) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    Ok(Some((
        field(premise_key)?,
        field(hypothesis_key)?,
        label,
        pair_id,
    )))
}

/// Lowercases, splits on whitespace, and trims non-alphanumeric edge
/// characters from each token. Apostrophes are kept so `didn't` stays whole.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let token = raw
                .trim_matches(|c: char| !(c.is_alphanumeric() || c == '\''))
                .to_lowercase();
            (!token.is_empty()).then_some(token)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn snli_line(s1: &str, s2: &str, label: &str) -> String {
        serde_json::json!({"sentence1": s1, "sentence2": s2, "gold_label": label}).to_string()
    }

    #[test]
    fn skips_no_consensus_lines() {
        let text = [
            snli_line("A man sleeps.", "A person rests.", "entailment"),
            snli_line("A dog runs.", "A cat runs.", "-"),
            snli_line("Kids play.", "Kids are outside.", "neutral"),
        ]
        .join("\n");
        let ds = parse_nlu_jsonl(Cursor::new(text), Schema::Snli, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(
            ds.pairs.iter().map(|p| p.id).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(ds.pairs[1].label, 2);
        assert_eq!(ds.total_lines, 3);
        assert_eq!(ds.skipped_lines + ds.len(), ds.total_lines);
    }

    #[test]
    fn unknown_label_reports_line() {
        let text = [snli_line("a", "b", "neutral"), snli_line("a", "b", "maybe")].join("\n");
        match parse_nlu_jsonl(Cursor::new(text), Schema::Mnli, Split::Valid) {
            Err(DatasetError::Label { line, source }) => {
                assert_eq!(line, 2);
                assert_eq!(source.raw, "maybe");
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{}\n{{not json\n", snli_line("a", "b", "neutral"));
        match parse_nlu_jsonl(Cursor::new(text), Schema::Snli, Split::Train) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = parse_nlu_jsonl(Cursor::new(""), Schema::Snli, Split::Train).unwrap_err();
        assert!(matches!(err, DatasetError::Empty(_)));
    }

    #[test]
    fn fever_has_no_test_split_and_keeps_dash() {
        let err = parse_nlu_jsonl(Cursor::new(""), Schema::Fever, Split::Test).unwrap_err();
        assert!(matches!(err, DatasetError::NoTestSplit(_)));

        let line = serde_json::json!({"evidence": "x", "claim": "y", "label": "-"}).to_string();
        let err = parse_nlu_jsonl(Cursor::new(line), Schema::Fever, Split::Train).unwrap_err();
        assert!(matches!(err, DatasetError::Label { line: 1, .. }));

        let line = serde_json::json!({"evidence": "Paris is in France.", "claim": "Paris isn't French.", "label": "REFUTES", "id": 17}).to_string();
        let ds = parse_nlu_jsonl(Cursor::new(line), Schema::Fever, Split::Valid).unwrap();
        assert_eq!(ds.pairs[0].label, 1);
        assert_eq!(ds.pairs[0].hypothesis, "Paris isn't French.");
        assert_eq!(ds.pairs[0].pair_id.as_deref(), Some("17"));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("No, he didn't!"), vec!["no", "he", "didn't"]);
        assert_eq!(tokenize("A man sleeps."), vec!["a", "man", "sleeps"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize(" -- ... ").is_empty());
        assert_eq!(tokenize("Tab\tand\u{00a0}nbsp"), vec!["tab", "and", "nbsp"]);
    }

    #[test]
    fn map_label_examples() {
        assert_eq!(LabelSpace::nli().map_label("entailment"), Ok(0));
        assert_eq!(LabelSpace::nli().map_label("Contradiction"), Ok(1));
        assert_eq!(LabelSpace::fever().map_label("REFUTES"), Ok(1));
        assert_eq!(
            LabelSpace::fever().map_label("supports "),
            Err(LabelError {
                raw: "supports ".into()
            })
        );
    }

    #[test]
    fn label_space_validation() {
        assert!(LabelSpace::new(["only"]).is_err());
        assert!(LabelSpace::new(["a", "a"]).is_err());
        assert!(LabelSpace::new(["a", ""]).is_err());
        assert_eq!(LabelSpace::new(["a", "b"]).unwrap().k(), 2);
    }
}
