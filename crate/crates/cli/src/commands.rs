use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use uqline_core::debias::hash_ids;
use uqline_core::measures::{read_scores_csv, write_scores_csv};
use uqline_core::prr::{
    join_runs, render_summary_csv, render_table_csv, summarize_by_measure, MeasureSummary,
    PrrRunEntry,
};
use uqline_core::records::{parse_records_lenient, split_indices, write_records};
use uqline_core::stats::{binned_trend_with, TrendReportEntry, DEFAULT_BINS};
use uqline_core::synth::write_truth;
use uqline_core::{
    apply_line_model, compute_scores, fit_line_model, generate, parse_records, prr, DebiasMode,
    DebiasModel, FitOn, GenerationRecord, Measure, MeasureScore, PrrComparison, QualityDirection,
    Strictness, SynthConfig,
};

use crate::args::{
    layer, load_config, ApplyArgs, FitArgs, MeasuresArgs, PrrArgs, ReportArgs, SplitSel,
    SynthArgs, TrendsArgs,
};
use crate::error::CliError;
use crate::manifest::Run;
use crate::svg;

const DEFAULT_TRAIN_FRAC: f64 = 0.5;
const DEFAULT_SEED: u64 = 0;
const FALLBACK_DATASET: &str = "default";

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn check_degree(degree: usize) -> Result<usize, CliError> {
    if (1..=3).contains(&degree) {
        Ok(degree)
    } else {
        Err(CliError::usage(format!("degree must be 1, 2 or 3, got {degree}")))
    }
}

fn check_fraction(f: f64) -> Result<f64, CliError> {
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(CliError::usage(format!(
            "train fraction must lie strictly between 0 and 1, got {f}"
        )))
    }
}

fn load_records(
    run: &mut Run,
    path: &Path,
    direction: QualityDirection,
    strict: bool,
) -> Result<Vec<GenerationRecord>, CliError> {
    let bytes = run.read(path)?;
    if strict {
        return parse_records(&bytes[..], direction).map_err(|e| CliError::from(e).in_file(path));
    }
    let (records, skipped) =
        parse_records_lenient(&bytes[..], direction).map_err(|e| CliError::from(e).in_file(path))?;
    for e in &skipped {
        warn!("{}: skipping {e}", path.display());
    }
    run.count("skipped_lines", skipped.len() as u64);
    Ok(records)
}

fn load_scores(run: &mut Run, path: &Path) -> Result<Vec<MeasureScore>, CliError> {
    let bytes = run.read(path)?;
    read_scores_csv(&bytes[..]).map_err(|e| CliError::from(e).in_file(path))
}

fn scores_csv(scores: &[MeasureScore]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, scores).expect("writing to memory cannot fail");
    buf
}

fn pretty_json(value: &impl Serialize) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text.into_bytes()
}

/// The single `meta.dataset` shared by all records, if there is one.
fn dataset_of(records: &[GenerationRecord]) -> Option<String> {
    let names: BTreeSet<&str> = records
        .iter()
        .filter_map(|r| r.meta.as_ref()?.get("dataset").map(String::as_str))
        .collect();
    match (names.len(), names.first()) {
        (1, Some(name)) => Some(name.to_string()),
        _ => None,
    }
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Reproduces the `(train, test)` index split.
fn split_records(
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    Ok(split_indices(n, fraction, seed)?)
}

fn select(records: &[GenerationRecord], idx: &[usize]) -> Vec<GenerationRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

// ---------------------------------------------------------------------------

pub fn measures(mut a: MeasuresArgs) -> Result<(), CliError> {
    let file: MeasuresArgs = load_config(a.config.as_deref())?;
    layer!(a, file; input, measures, output, strict, quality_direction);
    let input = required(&a.input, "input")?.clone();
    let output = required(&a.output, "output")?.clone();
    let strict = a.strict.unwrap_or(false);
    let wanted = a.measures.clone().unwrap_or_else(|| Measure::ALL.to_vec());
    if wanted.is_empty() {
        return Err(CliError::usage("--measures must name at least one measure"));
    }

    let mut run = Run::new("measures", &a, None);
    let records = load_records(
        &mut run,
        &input,
        a.quality_direction.unwrap_or_default(),
        strict,
    )?;
    let strictness = if strict {
        Strictness::Strict
    } else {
        Strictness::Skip
    };
    let batch = compute_scores(&records, &wanted, strictness)?;
    run.count("skipped_scores", batch.skipped.len() as u64);
    info!(
        "scored {} records, {} scores written",
        records.len(),
        batch.scores.len()
    );
    run.write(&output, &scores_csv(&batch.scores))?;
    run.finish(&output)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrendOutput {
    #[serde(flatten)]
    entry: TrendReportEntry,
    coefficients: Vec<f64>,
    slope_se: f64,
    fit_on: FitOn,
    bin_edges: Vec<f64>,
    bin_means: Vec<Option<f64>>,
    bin_counts: Vec<usize>,
}

pub fn trends(mut a: TrendsArgs) -> Result<(), CliError> {
    let file: TrendsArgs = load_config(a.config.as_deref())?;
    layer!(a, file; scores, records, bins, fit_on, degree, svg_dir, dataset, quality_direction, output);
    let scores_path = required(&a.scores, "scores")?.clone();
    let output = required(&a.output, "output")?.clone();
    let bins = a.bins.unwrap_or(DEFAULT_BINS);
    let fit_on = a.fit_on.unwrap_or_default();
    let degree = check_degree(a.degree.unwrap_or(1))?;

    let mut run = Run::new("trends", &a, None);
    let scores = load_scores(&mut run, &scores_path)?;
    let records = match &a.records {
        Some(p) => Some(load_records(
            &mut run,
            p,
            a.quality_direction.unwrap_or_default(),
            true,
        )?),
        None => None,
    };
    let dataset = a
        .dataset
        .clone()
        .or_else(|| records.as_deref().and_then(dataset_of))
        .unwrap_or_else(|| FALLBACK_DATASET.to_string());

    let mut series: BTreeMap<Measure, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for s in &scores {
        let e = series.entry(s.measure).or_default();
        e.0.push(s.length);
        e.1.push(s.value);
    }
    let mut named: Vec<(String, Vec<usize>, Vec<f64>)> = series
        .into_iter()
        .map(|(m, (l, v))| (m.tag().to_string(), l, v))
        .collect();
    if let Some(records) = &records {
        let missing = records.iter().filter(|r| r.quality.is_none()).count();
        if missing == records.len() {
            warn!("records carry no quality labels; skipping the quality trend");
        } else if missing > 0 {
            return Err(CliError::data(format!(
                "{missing} record(s) lack a quality label; cannot fit the quality trend"
            )));
        } else {
            named.push((
                "quality".to_string(),
                records.iter().map(uqline_core::length_of).collect(),
                records.iter().map(|r| r.quality.unwrap_or_default()).collect(),
            ));
        }
    }
    if named.is_empty() {
        return Err(CliError::data("no scores to analyse"));
    }

    let mut report = Vec::with_capacity(named.len());
    for (name, lengths, values) in &named {
        let trend = binned_trend_with(lengths, values, bins, degree, fit_on)
            .map_err(|e| CliError::from(e).in_file(&scores_path))?;
        info!(
            "{dataset}/{name}: slope {:.4}, p {:.3e}, n {}",
            trend.fit.slope(),
            trend.fit.p_value,
            trend.fit.n
        );
        if let Some(dir) = &a.svg_dir {
            let path = dir.join(format!("{}-{}.svg", file_stem(&dataset), file_stem(name)));
            let plot = svg::trend_plot(&format!("{dataset}: {name} vs length"), name, &trend);
            run.write(&path, plot.as_bytes())?;
        }
        report.push(TrendOutput {
            entry: TrendReportEntry::new(&dataset, name, &trend.fit),
            coefficients: trend.fit.coefficients.clone(),
            slope_se: trend.fit.slope_se,
            fit_on,
            bin_edges: trend.bin_edges,
            bin_means: trend.bin_means,
            bin_counts: trend.bin_counts,
        });
    }
    run.write(&output, &pretty_json(&report))?;
    run.finish(&output)?;
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn fit(mut a: FitArgs) -> Result<(), CliError> {
    let file: FitArgs = load_config(a.config.as_deref())?;
    layer!(a, file; input, measure, mode, degree, train_frac, seed, quality_direction, strict, output);
    let input = required(&a.input, "input")?.clone();
    let output = required(&a.output, "output")?.clone();
    let measure = *required(&a.measure, "measure")?;
    let mode = a.mode.unwrap_or_default();
    let degree = check_degree(a.degree.unwrap_or(1))?;
    let fraction = check_fraction(a.train_frac.unwrap_or(DEFAULT_TRAIN_FRAC))?;
    let seed = a.seed.unwrap_or(DEFAULT_SEED);

    let mut run = Run::new("fit", &a, Some(seed));
    let records = load_records(
        &mut run,
        &input,
        a.quality_direction.unwrap_or_default(),
        a.strict.unwrap_or(false),
    )?;
    let (train_idx, _) = split_records(records.len(), fraction, seed)?;
    let train = select(&records, &train_idx);
    let mut model = fit_line_model(&train, measure, mode, degree, seed)?;
    model.provenance.train_fraction = Some(fraction);
    info!(
        "{measure} {mode} degree {degree}: slope {:.4} (p {:.3e}) on {} training records",
        model.uncertainty_fit.slope(),
        model.uncertainty_fit.p_value,
        train.len()
    );
    let mut text = model.to_json();
    text.push('\n');
    run.write(&output, text.as_bytes())?;
    run.finish(&output)?;
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn apply(mut a: ApplyArgs) -> Result<(), CliError> {
    let file: ApplyArgs = load_config(a.config.as_deref())?;
    layer!(a, file; model, input, scores, split, quality_direction, strict, output);
    let model_path = required(&a.model, "model")?.clone();
    let output = required(&a.output, "output")?.clone();

    let mut run = Run::new("apply", &a, None);
    let model_bytes = run.read(&model_path)?;
    let model_text = String::from_utf8(model_bytes)
        .map_err(|_| CliError::schema("model file is not UTF-8").in_file(&model_path))?;
    let model =
        DebiasModel::from_json(&model_text).map_err(|e| CliError::from(e).in_file(&model_path))?;

    let scores = match (&a.input, &a.scores) {
        (Some(input), None) => {
            let split = a.split.unwrap_or(SplitSel::Test);
            let records = load_records(
                &mut run,
                input,
                a.quality_direction.unwrap_or_default(),
                a.strict.unwrap_or(false),
            )?;
            let selected = reproduce_split(&model, &records, split)?;
            compute_scores(&selected, &[model.measure], Strictness::Strict)?.scores
        }
        (None, Some(path)) => {
            if matches!(a.split, Some(s) if s != SplitSel::All) {
                return Err(CliError::usage(
                    "--split needs --input records; score files are debiased as a whole",
                ));
            }
            load_scores(&mut run, path)?
        }
        _ => return Err(CliError::usage("exactly one of --input or --scores is required")),
    };

    let applied = apply_line_model(&model, &scores)?;
    if applied.extrapolated > 0 {
        warn!(
            "{} of {} lengths fall outside the training range [{}, {}] and were extrapolated",
            applied.extrapolated,
            scores.len(),
            model.length_norm.min,
            model.length_norm.max
        );
    }
    run.count("extrapolated", applied.extrapolated as u64);
    run.write(&output, &scores_csv(&applied.scores))?;
    run.finish(&output)?;
    Ok(())
}

/// Re-derives the model's split and checks it against the stored training
/// id hash, so a model is never evaluated on the records it was fitted to
/// by accident.
fn reproduce_split(
    model: &DebiasModel,
    records: &[GenerationRecord],
    split: SplitSel,
) -> Result<Vec<GenerationRecord>, CliError> {
    if split == SplitSel::All {
        return Ok(records.to_vec());
    }
    let fraction = model.provenance.train_fraction.ok_or_else(|| {
        CliError::usage("model has no recorded train fraction; use --split all")
    })?;
    let (train, test) = split_records(records.len(), fraction, model.provenance.seed)?;
    let hash = hash_ids(train.iter().map(|&i| records[i].id.as_str()));
    if hash != model.provenance.train_ids_hash {
        return Err(CliError::data(
            "input records do not reproduce the model's training split",
        ));
    }
    Ok(select(
        records,
        if split == SplitSel::Train { &train } else { &test },
    ))
}

// ---------------------------------------------------------------------------

pub fn prr_cmd(mut a: PrrArgs) -> Result<(), CliError> {
    let file: PrrArgs = load_config(a.config.as_deref())?;
    layer!(a, file; input, scores, measures, split, seed, train_frac, mode, dataset, quality_direction, strict, svg_dir, output);
    let input = required(&a.input, "input")?.clone();
    let scores_path = required(&a.scores, "scores")?.clone();
    let output = required(&a.output, "output")?.clone();
    let mode = a.mode.clone().unwrap_or_else(|| "base".to_string());
    if mode != "base" && mode.parse::<DebiasMode>().is_err() {
        return Err(CliError::usage(format!(
            "--mode must be base, unsupervised or quality-aware, got '{mode}'"
        )));
    }
    let split = a.split.unwrap_or(SplitSel::All);
    let seed = a.seed.unwrap_or(DEFAULT_SEED);

    let mut run = Run::new("prr", &a, (split != SplitSel::All).then_some(seed));
    let records = load_records(
        &mut run,
        &input,
        a.quality_direction.unwrap_or_default(),
        a.strict.unwrap_or(false),
    )?;
    let scores = load_scores(&mut run, &scores_path)?;
    let dataset = a
        .dataset
        .clone()
        .or_else(|| dataset_of(&records))
        .unwrap_or_else(|| FALLBACK_DATASET.to_string());

    let selected = match split {
        SplitSel::All => records,
        side => {
            let fraction = check_fraction(a.train_frac.unwrap_or(DEFAULT_TRAIN_FRAC))?;
            let (train, test) = split_records(records.len(), fraction, seed)?;
            select(&records, if side == SplitSel::Train { &train } else { &test })
        }
    };
    let mut qualities = Vec::with_capacity(selected.len());
    for r in &selected {
        qualities.push(r.quality.ok_or_else(|| {
            CliError::data(format!("record '{}' has no quality label", r.id)).in_file(&input)
        })?);
    }

    let mut by_measure: BTreeMap<Measure, HashMap<&str, f64>> = BTreeMap::new();
    for s in &scores {
        by_measure
            .entry(s.measure)
            .or_default()
            .insert(s.record_id.as_str(), s.value);
    }
    let wanted: Vec<Measure> = match &a.measures {
        Some(list) => {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            if let Some(m) = list.iter().find(|m| !by_measure.contains_key(m)) {
                return Err(CliError::data(format!("scores contain no {m} values")).in_file(&scores_path));
            }
            list
        }
        None => by_measure.keys().copied().collect(),
    };
    if wanted.is_empty() {
        return Err(CliError::data("no scores to evaluate").in_file(&scores_path));
    }

    let mut entries = Vec::with_capacity(wanted.len());
    for m in wanted {
        let values = &by_measure[&m];
        let mut u = Vec::with_capacity(selected.len());
        for r in &selected {
            u.push(*values.get(r.id.as_str()).ok_or_else(|| {
                CliError::data(format!("no {m} score for record '{}'", r.id)).in_file(&scores_path)
            })?);
        }
        let result = prr(&u, &qualities)?;
        info!("{dataset}/{m} ({mode}): PRR {:.4} over {}", result.prr, result.n);
        if let Some(dir) = &a.svg_dir {
            let path = dir.join(format!(
                "{}-{}-{}-prr.svg",
                file_stem(&dataset),
                m.tag(),
                file_stem(&mode)
            ));
            let plot = svg::prr_plot(&format!("{dataset}: {m} ({mode})"), &result);
            run.write(&path, plot.as_bytes())?;
        }
        entries.push(PrrRunEntry::new(&dataset, m.tag(), &mode, &result));
    }
    run.write(&output, &pretty_json(&entries))?;
    run.finish(&output)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ComparisonReport {
    comparisons: Vec<PrrComparison>,
    summary: Vec<MeasureSummary>,
}

fn load_runs(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<PrrRunEntry>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        let bytes = run.read(p)?;
        let entries: Vec<PrrRunEntry> = serde_json::from_slice(&bytes).map_err(|e| {
            CliError::schema(format!("not a PRR run file: {e}")).in_file(p)
        })?;
        out.extend(entries);
    }
    Ok(out)
}

pub fn report(mut a: ReportArgs) -> Result<(), CliError> {
    let file: ReportArgs = load_config(a.config.as_deref())?;
    layer!(a, file; output, table, summary);
    if a.base.is_empty() {
        a.base = file.base;
    }
    if a.line.is_empty() {
        a.line = file.line;
    }
    if a.base.is_empty() || a.line.is_empty() {
        return Err(CliError::usage("at least one --base and one --line run are required"));
    }
    let output = required(&a.output, "output")?.clone();

    let mut run = Run::new("report", &a, None);
    let base = load_runs(&mut run, &a.base)?;
    let line = load_runs(&mut run, &a.line)?;
    let comparisons = join_runs(&base, &line)?;
    let summary = summarize_by_measure(&comparisons);
    for s in &summary {
        info!(
            "{}: mean ΔPRR {:+.4} over {} dataset(s)",
            s.measure, s.mean_delta, s.datasets
        );
    }
    if let Some(path) = &a.table {
        run.write(path, render_table_csv(&comparisons).as_bytes())?;
    }
    if let Some(path) = &a.summary {
        run.write(path, render_summary_csv(&summary).as_bytes())?;
    }
    run.write(
        &output,
        &pretty_json(&ComparisonReport {
            comparisons,
            summary,
        }),
    )?;
    run.finish(&output)?;
    Ok(())
}

// ---------------------------------------------------------------------------

/// Effective generator settings recorded in the manifest.
#[derive(Serialize)]
struct SynthFlags<'a> {
    config: &'a SynthConfig,
    output: &'a Path,
    truth: &'a Path,
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let output = required(&a.output, "output")?.clone();
    let truth_path = a.truth.clone().unwrap_or_else(|| {
        let mut name = output.as_os_str().to_owned();
        name.push(".truth.jsonl");
        PathBuf::from(name)
    });

    let mut inputs = Vec::new();
    let mut config: SynthConfig = match &a.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| CliError::read_failure(path, e))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| CliError::usage("config is not UTF-8").in_file(path))?;
            inputs.push((path.clone(), bytes));
            toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid synth config: {e}")).in_file(path))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.n {
        config.n = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.min_tokens {
        config.length_range.0 = v;
    }
    if let Some(v) = a.max_tokens {
        config.length_range.1 = v;
    }
    if let Some(v) = a.uncertainty_slope {
        config.uncertainty_slope = v;
    }
    if let Some(v) = a.quality_slope {
        config.quality_slope = v;
    }
    if let Some(v) = a.signal_strength {
        config.signal_strength = v;
    }
    if let Some(v) = a.noise_sigma {
        config.noise_sigma = v;
    }
    if let Some(v) = a.n_samples {
        config.n_samples = v;
    }
    if let Some(v) = a.difficulty_scale {
        config.difficulty_scale = v;
    }
    if let Some(v) = a.base_uncertainty {
        config.base_uncertainty = v;
    }
    if let Some(v) = &a.dataset {
        config.dataset = v.clone();
    }

    let flags = SynthFlags {
        config: &config,
        output: &output,
        truth: &truth_path,
    };
    let mut run = Run::new("synth", &flags, Some(config.seed));
    for (path, _) in &inputs {
        run.read(path)?;
    }
    let data = generate(&config)?;
    let mut records = Vec::new();
    write_records(&mut records, &data.records).expect("writing to memory cannot fail");
    let mut truth = Vec::new();
    write_truth(&mut truth, &data.truth).expect("writing to memory cannot fail");
    run.write(&output, &records)?;
    run.write(&truth_path, &truth)?;
    info!("wrote {} records to {}", data.records.len(), output.display());
    run.finish(&output)?;
    Ok(())
}
