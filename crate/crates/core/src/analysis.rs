//! Robustness deltas, extractability/robustness correlations and γ sweeps.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("records CSV is missing column {0:?}")]
    MissingColumn(String),
    #[error("records CSV row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("gamma sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One trained model's o.o.d accuracy and bias-probe results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_name: String,
    pub bias: String,
    pub dataset: String,
    pub objective: String,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    #[serde(rename = "ood_acc")]
    pub ood_accuracy: f64,
    #[serde(rename = "baseline_ood_acc")]
    pub baseline_ood_accuracy: f64,
    pub compression: f64,
    #[serde(rename = "probe_acc")]
    pub probe_accuracy: f64,
}

pub const RECORD_COLUMNS: [&str; 10] = [
    "model_name",
    "bias",
    "dataset",
    "objective",
    "gamma",
    "seed",
    "ood_acc",
    "baseline_ood_acc",
    "compression",
    "probe_acc",
];

impl ModelRecord {
    fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("ood_acc", self.ood_accuracy),
            ("baseline_ood_acc", self.baseline_ood_accuracy),
            ("probe_acc", self.probe_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.compression > 0.0) || !self.compression.is_finite() {
            return Err(format!(
                "compression = {} must be positive",
                self.compression
            ));
        }
        Ok(())
    }
}

pub fn robustness_delta(rec: &ModelRecord) -> f64 {
    rec.ood_accuracy - rec.baseline_ood_accuracy
}

/// Reads records; every column of [`RECORD_COLUMNS`] must be present,
/// `gamma` and `seed` may be empty.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<ModelRecord>, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if let Some(missing) = RECORD_COLUMNS
        .iter()
        .find(|c| !headers.iter().any(|h| h == **c))
    {
        return Err(AnalysisError::MissingColumn(missing.to_string()));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<ModelRecord>().enumerate() {
        let row_no = i + 1;
        let rec = row.map_err(|e| AnalysisError::BadRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        rec.validate().map_err(|reason| AnalysisError::BadRow {
            row: row_no,
            reason,
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_records_csv<W: Write>(
    writer: W,
    records: &[ModelRecord],
) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(RECORD_COLUMNS)?;
    }
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::Shape(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(AnalysisError::TooFew(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(AnalysisError::ZeroVariance("ys"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Bias,
    Dataset,
    Objective,
    Gamma,
}

impl GroupKey {
    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Bias => "bias",
            GroupKey::Dataset => "dataset",
            GroupKey::Objective => "objective",
            GroupKey::Gamma => "gamma",
        }
    }

    fn value(self, rec: &ModelRecord) -> String {
        match self {
            GroupKey::Bias => rec.bias.clone(),
            GroupKey::Dataset => rec.dataset.clone(),
            GroupKey::Objective => rec.objective.clone(),
            GroupKey::Gamma => rec.gamma.map(|g| g.to_string()).unwrap_or_default(),
        }
    }
}

impl std::str::FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bias" => Ok(GroupKey::Bias),
            "dataset" => Ok(GroupKey::Dataset),
            "objective" => Ok(GroupKey::Objective),
            "gamma" => Ok(GroupKey::Gamma),
            other => Err(format!("unknown group key {other:?}")),
        }
    }
}

/// How per-seed records of one model become correlation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One point per model: medians across seeds.
    Median,
    /// One point per model: means across seeds.
    Mean,
    /// One point per record.
    PerSeed,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Aggregation::Median),
            "mean" => Ok(Aggregation::Mean),
            "per-seed" => Ok(Aggregation::PerSeed),
            other => Err(format!(
                "unknown aggregation {other:?} (median, mean or per-seed)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub model_name: String,
    pub seeds: usize,
    pub compression: f64,
    pub robustness_delta: f64,
    pub compression_mean: f64,
    pub robustness_delta_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub group: BTreeMap<String, String>,
    /// Points entering the correlation.
    pub m: usize,
    pub rho: Option<f64>,
    pub warning: Option<String>,
    pub points: Vec<CorrelationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub group_by: Vec<GroupKey>,
    pub aggregation: Aggregation,
    pub rows: Vec<CorrelationRow>,
}

/// Per group: Pearson ρ between compression and robustness delta. Groups
/// with fewer than three points (or no variance) get a warning row instead.
pub fn correlation_report(
    records: &[ModelRecord],
    group_by: &[GroupKey],
    aggregation: Aggregation,
) -> CorrelationReport {
    let mut groups: BTreeMap<Vec<String>, Vec<&ModelRecord>> = BTreeMap::new();
    for rec in records {
        let key = group_by.iter().map(|g| g.value(rec)).collect();
        groups.entry(key).or_default().push(rec);
    }
    let rows = groups
        .into_iter()
        .map(|(key, recs)| {
            let group = group_by
                .iter()
                .zip(key)
                .map(|(g, v)| (g.name().to_string(), v))
                .collect();
            let points = aggregate(&recs, aggregation);
            let m = points.len();
            let xs: Vec<f64> = points.iter().map(|p| p.compression).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.robustness_delta).collect();
            let (rho, warning) = match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(format!("skipped: {e}"))),
            };
            CorrelationRow {
                group,
                m,
                rho,
                warning,
                points,
            }
        })
        .collect();
    CorrelationReport {
        group_by: group_by.to_vec(),
        aggregation,
        rows,
    }
}

fn aggregate(records: &[&ModelRecord], aggregation: Aggregation) -> Vec<CorrelationPoint> {
    let single = |rec: &ModelRecord| CorrelationPoint {
        model_name: match rec.seed {
            Some(s) => format!("{}#{s}", rec.model_name),
            None => rec.model_name.clone(),
        },
        seeds: 1,
        compression: rec.compression,
        robustness_delta: robustness_delta(rec),
        compression_mean: rec.compression,
        robustness_delta_mean: robustness_delta(rec),
    };
    if aggregation == Aggregation::PerSeed {
        let mut points: Vec<CorrelationPoint> = records.iter().map(|r| single(r)).collect();
        points.sort_by(|a, b| {
            a.model_name
                .cmp(&b.model_name)
                .then(a.compression.total_cmp(&b.compression))
                .then(a.robustness_delta.total_cmp(&b.robustness_delta))
        });
        return points;
    }
    let mut by_model: BTreeMap<&str, Vec<&ModelRecord>> = BTreeMap::new();
    for rec in records {
        by_model
            .entry(rec.model_name.as_str())
            .or_default()
            .push(rec);
    }
    by_model
        .into_iter()
        .map(|(name, recs)| {
            // Sorted so means do not depend on record order.
            let mut comp: Vec<f64> = recs.iter().map(|r| r.compression).collect();
            let mut delta: Vec<f64> = recs.iter().map(|r| robustness_delta(r)).collect();
            comp.sort_by(f64::total_cmp);
            delta.sort_by(f64::total_cmp);
            let (c, d) = match aggregation {
                Aggregation::Mean => (mean(&comp), mean(&delta)),
                _ => (median(&comp), median(&delta)),
            };
            CorrelationPoint {
                model_name: name.to_string(),
                seeds: recs.len(),
                compression: c,
                robustness_delta: d,
                compression_mean: mean(&comp),
                robustness_delta_mean: mean(&delta),
            }
        })
        .collect()
}

impl CorrelationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.group_by.iter().map(|g| g.name().to_string()).collect();
        header.extend(["m", "rho", "warning"].map(String::from));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut fields: Vec<String> = self
                .group_by
                .iter()
                .map(|g| row.group.get(g.name()).cloned().unwrap_or_default())
                .collect();
            fields.push(row.m.to_string());
            fields.push(row.rho.map(|r| format!("{r:.6}")).unwrap_or_default());
            fields.push(row.warning.clone().unwrap_or_default());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub seeds: usize,
    pub median_compression: f64,
    pub mean_compression: f64,
    pub std_compression: f64,
}

/// Per-γ median and spread of compression over DFL records. When `gammas` is
/// empty every γ present is used.
pub fn gamma_sweep(
    records: &[ModelRecord],
    gammas: &[f64],
) -> Result<Vec<SweepPoint>, AnalysisError> {
    let mut by_gamma: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for rec in records
        .iter()
        .filter(|r| r.objective.eq_ignore_ascii_case("dfl"))
    {
        if let Some(g) = rec.gamma {
            by_gamma
                .entry(g.to_bits())
                .or_default()
                .push(rec.compression);
        }
    }
    let wanted: Vec<f64> = if gammas.is_empty() {
        let mut g: Vec<f64> = by_gamma.keys().map(|&b| f64::from_bits(b)).collect();
        g.sort_by(f64::total_cmp);
        g
    } else {
        let mut g = gammas.to_vec();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    let missing: Vec<String> = wanted
        .iter()
        .filter(|g| by_gamma.get(&g.to_bits()).map_or(0, Vec::len) < 3)
        .map(|g| g.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(AnalysisError::Sweep(format!(
            "fewer than 3 DFL seeds for gamma {}",
            missing.join(", ")
        )));
    }
    if wanted.len() < 2 {
        return Err(AnalysisError::Sweep(format!(
            "need at least 2 distinct gamma values, got {}",
            wanted.len()
        )));
    }
    Ok(wanted
        .into_iter()
        .map(|g| {
            let values = &by_gamma[&g.to_bits()];
            SweepPoint {
                gamma: g,
                seeds: values.len(),
                median_compression: median(values),
                mean_compression: mean(values),
                std_compression: std_dev(values),
            }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(writer: W, sweep: &[SweepPoint]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    for p in sweep {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
