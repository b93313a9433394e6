use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use probekit::analysis::{self, ModelRecord};
use probekit::lab::experiment::{model_name, run_grid, toy_records, ToyRun, ToyRunConfig};
use probekit::lab::DebiasObjective;
use probekit::probing::read_probing_jsonl;
use probekit::repr::{join_per_split, read_header};
use probekit::{
    build_probing_dataset, join, load_nlu_jsonl, online_code, read_repr, write_repr,
    OnlineCodeConfig,
};
use serde::Serialize;

use crate::error::{code, CliError};
use crate::output::{digest, ensure_dir, read_json, write_json, InputDigest};
use crate::{
    BuildDatasetArgs, CorrelateArgs, ExportInfoArgs, ProbeArgs, SweepArgs, ToyArgs, ToyCommon,
};

#[derive(Serialize)]
struct DatasetManifest<'a> {
    input: InputDigest,
    total_lines: usize,
    skipped_lines: usize,
    #[serde(flatten)]
    dataset: &'a probekit::ProbingDataset,
}

pub fn build_dataset(args: &BuildDatasetArgs) -> Result<(), CliError> {
    let ds = load_nlu_jsonl(&args.input, args.schema, args.split)?;
    info!(
        "{}: {} pairs kept, {} lines skipped",
        args.input.display(),
        ds.pairs.len(),
        ds.skipped_lines
    );
    let pd = build_probing_dataset(&ds, &args.task, args.seed)?;
    ensure_dir(&args.out_dir)?;
    let stem = format!("{}_{}_{}", args.schema, args.task.name(), args.split);
    let jsonl = args.out_dir.join(format!("{stem}.jsonl"));
    let mut out = BufWriter::new(File::create(&jsonl).map_err(|e| CliError::io(&jsonl, e))?);
    for e in &pd.examples {
        let line = serde_json::to_string(e).expect("plain struct serializes");
        writeln!(out, "{line}").map_err(|e| CliError::io(&jsonl, e))?;
    }
    out.flush().map_err(|e| CliError::io(&jsonl, e))?;
    let manifest = DatasetManifest {
        input: digest(&args.input)?,
        total_lines: ds.total_lines,
        skipped_lines: ds.skipped_lines,
        dataset: &pd,
    };
    write_json(
        &args.out_dir.join(format!("{stem}.manifest.json")),
        &manifest,
    )?;

    let c = pd.counts;
    eprintln!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}",
        "dataset", "pairs", "positive", "negative", "probing"
    );
    eprintln!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}",
        format!("{}/{}", args.schema, args.split),
        c.source_pairs,
        c.source_positives,
        c.source_pairs - c.source_positives,
        c.total
    );
    Ok(())
}

#[derive(Serialize)]
struct ProbeOutput {
    config: OnlineCodeConfig,
    inputs: Vec<InputDigest>,
    report: probekit::ProbeReport,
}

pub fn probe(args: &ProbeArgs) -> Result<(), CliError> {
    let mut cfg: OnlineCodeConfig = match &args.config {
        Some(path) => read_json(path, code::PROBE_INPUT)?,
        None => OnlineCodeConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.diagnostic_uniform |= args.diagnostic_uniform;

    let load = |path: &Option<std::path::PathBuf>| -> Result<Vec<_>, CliError> {
        match path {
            Some(p) => Ok(read_probing_jsonl(p)?),
            None => Ok(Vec::new()),
        }
    };
    let train = read_probing_jsonl(&args.train)?;
    let valid = load(&args.valid)?;
    let test = load(&args.test)?;

    let mut inputs = Vec::new();
    let input = if let Some(reprs) = &args.reprs {
        let m = read_repr(reprs)?;
        inputs.push(digest(reprs)?);
        join(&train, &valid, &test, &m)?
    } else {
        let train_path = args.train_reprs.as_ref().ok_or_else(|| {
            CliError::new(
                code::PROBE_INPUT,
                "either --reprs or --train-reprs is required",
            )
        })?;
        let m_train = read_repr(train_path)?;
        inputs.push(digest(train_path)?);
        let mut side = |path: &Option<std::path::PathBuf>,
                        examples: &[_],
                        name: &str|
         -> Result<_, CliError> {
            match path {
                Some(p) => {
                    inputs.push(digest(p)?);
                    Ok(Some(read_repr(p)?))
                }
                None if examples.is_empty() => Ok(None),
                None => Err(CliError::new(
                    code::PROBE_INPUT,
                    format!("--{name} given without --{name}-reprs"),
                )),
            }
        };
        let m_valid = side(&args.valid_reprs, &valid, "valid")?;
        let m_test = side(&args.test_reprs, &test, "test")?;
        join_per_split([
            (&train, &m_train),
            (&valid, m_valid.as_ref().unwrap_or(&m_train)),
            (&test, m_test.as_ref().unwrap_or(&m_train)),
        ])?
    };
    inputs.push(digest(&args.train)?);
    for path in [&args.valid, &args.test].into_iter().flatten() {
        inputs.push(digest(path)?);
    }

    info!(
        "probing {} rows (d={}, k={})",
        input.n(),
        input.d(),
        input.k
    );
    let report = online_code(&input, &cfg)?;
    eprintln!(
        "compression {:.4}  online {:.1} bits  uniform {:.1} bits  {} accuracy {:.4}",
        report.compression,
        report.l_online,
        report.l_uniform,
        report.accuracy_split,
        report.test_accuracy
    );
    write_json(
        &args.out,
        &ProbeOutput {
            config: cfg,
            inputs,
            report,
        },
    )
}

fn toy_config(common: &ToyCommon) -> Result<ToyRunConfig, CliError> {
    let mut cfg: ToyRunConfig = match &common.config {
        Some(path) => read_json(path, code::OBJECTIVE)?,
        None => ToyRunConfig::default(),
    };
    if common.end_to_end {
        cfg.hyper.pipeline = false;
    }
    if let Some(kind) = common.bias_model {
        cfg.hyper.bias_model = kind;
    }
    Ok(cfg)
}

fn seeds(common: &ToyCommon) -> Result<Vec<u64>, CliError> {
    if common.seeds == 0 {
        return Err(CliError::new(code::OBJECTIVE, "--seeds must be at least 1"));
    }
    Ok((0..common.seeds).map(|i| common.seed + i).collect())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    objective: DebiasObjective,
    seed: u64,
    accuracies: probekit::lab::experiment::Accuracies,
    probe: &'a probekit::ProbeReport,
    reprs: InputDigest,
    config: &'a ToyRunConfig,
}

/// Trains `objectives` plus CE baselines, writes each run's representations
/// and manifest, and merges the records into `records.csv`.
fn run_toys(
    objectives: &[DebiasObjective],
    common: &ToyCommon,
) -> Result<Vec<ModelRecord>, CliError> {
    let cfg = toy_config(common)?;
    let seeds = seeds(common)?;
    let mut all = vec![DebiasObjective::Ce];
    all.extend(objectives.iter().filter(|o| **o != DebiasObjective::Ce));
    info!(
        "{} runs on {} threads",
        all.len() * seeds.len(),
        rayon::current_num_threads()
    );
    let runs: Vec<ToyRun> = run_grid(&all, &seeds, &cfg)?;
    let (baselines, debiased): (Vec<ToyRun>, Vec<ToyRun>) = runs
        .into_iter()
        .partition(|r| r.objective == DebiasObjective::Ce);

    ensure_dir(&common.out_dir)?;
    for run in baselines.iter().chain(&debiased) {
        let stem = format!("{}_s{}", model_name(&run.objective), run.seed);
        let rprb = common.out_dir.join(format!("{stem}.rprb"));
        write_repr(&run.reprs, &rprb)?;
        let manifest = RunManifest {
            objective: run.objective,
            seed: run.seed,
            accuracies: run.accuracies,
            probe: &run.probe,
            reprs: digest(&rprb)?,
            config: &cfg,
        };
        write_json(
            &common.out_dir.join(format!("{stem}.manifest.json")),
            &manifest,
        )?;
        eprintln!(
            "{:<10} seed {:<3} anti-test {:.4}  iid {:.4}  compression {:.4}",
            model_name(&run.objective),
            run.seed,
            run.accuracies.anti_test,
            run.accuracies.iid_test,
            run.probe.compression
        );
    }

    let mut records = toy_records(&baselines, &baselines)?;
    records.extend(toy_records(&debiased, &baselines)?);
    merge_records(&common.out_dir.join("records.csv"), records)
}

/// Rewrites `path` with `fresh` replacing any row of the same model and seed.
fn merge_records(path: &Path, fresh: Vec<ModelRecord>) -> Result<Vec<ModelRecord>, CliError> {
    let mut merged: BTreeMap<(String, Option<u64>), ModelRecord> = BTreeMap::new();
    if path.exists() {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        for rec in analysis::read_records_csv(file)? {
            merged.insert((rec.model_name.clone(), rec.seed), rec);
        }
    }
    for rec in fresh {
        merged.insert((rec.model_name.clone(), rec.seed), rec);
    }
    let records: Vec<ModelRecord> = merged.into_values().collect();
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    analysis::write_records_csv(BufWriter::new(file), &records)?;
    Ok(records)
}

pub fn toy(args: &ToyArgs) -> Result<(), CliError> {
    let objective = DebiasObjective::parse(&args.objective, args.gamma)?;
    run_toys(&[objective], &args.common)?;
    Ok(())
}

pub fn toy_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let objectives = args
        .gammas
        .iter()
        .map(|&g| DebiasObjective::parse("dfl", Some(g)))
        .collect::<Result<Vec<_>, _>>()?;
    let records = run_toys(&objectives, &args.common)?;
    let sweep = analysis::gamma_sweep(&records, &args.gammas)?;
    write_sweep(&args.common.out_dir, &sweep)
}

fn write_sweep(dir: &Path, sweep: &[analysis::SweepPoint]) -> Result<(), CliError> {
    let csv_path = dir.join("gamma_sweep.csv");
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    analysis::write_sweep_csv(BufWriter::new(file), sweep)?;
    write_json(&dir.join("gamma_sweep.json"), &sweep)?;
    for p in sweep {
        eprintln!(
            "gamma {:<5} median compression {:.4}  std {:.4}  ({} seeds)",
            p.gamma, p.median_compression, p.std_compression, p.seeds
        );
    }
    Ok(())
}

pub fn correlate(args: &CorrelateArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &args.records {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let rows = analysis::read_records_csv(file).map_err(|e| CliError::from(e).context(path))?;
        records.extend(rows);
    }
    let report = analysis::correlation_report(&records, &args.group_by, args.aggregation);
    ensure_dir(&args.out_dir)?;
    let csv_path = args.out_dir.join("correlation.csv");
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    report.write_csv(BufWriter::new(file))?;
    write_json(&args.out_dir.join("correlation.json"), &report)?;
    for row in &report.rows {
        let group: Vec<String> = row.group.iter().map(|(k, v)| format!("{k}={v}")).collect();
        match (row.rho, &row.warning) {
            (Some(rho), _) => eprintln!("{}  M={}  rho={rho:.4}", group.join(" "), row.m),
            (None, Some(w)) => eprintln!("{}  M={}  {w}", group.join(" "), row.m),
            (None, None) => eprintln!("{}  M={}", group.join(" "), row.m),
        }
    }

    let has_dfl = records
        .iter()
        .any(|r| r.objective.eq_ignore_ascii_case("dfl"));
    match analysis::gamma_sweep(&records, &args.gammas) {
        Ok(sweep) => write_sweep(&args.out_dir, &sweep)?,
        Err(e) if !args.gammas.is_empty() => return Err(e.into()),
        Err(e) if has_dfl => log::warn!("no gamma sweep: {e}"),
        Err(_) => {}
    }
    Ok(())
}

pub fn export_info(args: &ExportInfoArgs) -> Result<(), CliError> {
    let header = if args.check {
        read_repr(&args.input)?.header()
    } else {
        read_header(&args.input)?
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&header).expect("header serializes")
    );
    Ok(())
}
