use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;

use otsd_core::config::{EmbeddingConfig, HarnessConfig};
use otsd_core::corpus::{
    convert_ezstance, convert_vast_single_target, load_dataset, read_dataset, read_ezstance, read_vast_raw,
    save_dataset, stratified_human_eval_sample, ColumnMapping, Dataset, DatasetTag, EzStanceColumns, Explicitness,
    MatchPolicy, VastColumns,
};
use otsd_core::gateway::{ChatGateway, Embedder, HashingEmbedder, HttpEmbedder, ResponseCache, RetryPolicy};
use otsd_core::humaneval::{
    agreement_report, export_tasks, final_scores_by_configuration, he_by_configuration, read_annotations, serve,
    AppState, AnnotationStore, SealedKey, TaskBundle,
};
use otsd_core::metrics::{
    calibration_ladder, ladder_is_ordered, read_scores, score_results, write_scores, AlphaDistance,
    HttpStanceClassifier, ScoreRow, StanceClassifier,
};
use otsd_core::pipeline::{
    aggregate_repetitions, read_results, run_approach, write_results, AggregatedMetric, Approach, GeneratedResult,
    IncompleteSample, MetricKey, ResultFlag, RunContext, RunManifest, SystemClock,
};
use otsd_core::prompting::PromptTemplates;
use otsd_core::report::{
    build_results_table, correlate_per_sample, correlate_quality_vs_sc, render_grid, sample_observations,
    score_distribution, write_correlation_csv, write_distribution_csv, write_report_csv, FlagTally,
};

use crate::{Cli, Command, DatasetArgs};

struct Env {
    config: HarnessConfig,
    cache: Option<PathBuf>,
}

impl Env {
    fn retry(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.config.max_attempts, ..RetryPolicy::default() }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.config.request_timeout_secs)
    }

    fn policy(&self) -> MatchPolicy {
        self.config.explicitness
    }

    fn embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match &self.config.embedding {
            EmbeddingConfig::Hashing { dimension } => {
                log::warn!("using the hashing embedder; SemSim values are lexical only");
                Box::new(HashingEmbedder { dimension: *dimension, ..HashingEmbedder::default() })
            }
            EmbeddingConfig::Http { base_url, model, api_key_env } => {
                let key = match api_key_env {
                    Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable `{var}`"))?),
                    None => None,
                };
                Box::new(HttpEmbedder::new(base_url, model, key, self.retry(), self.timeout())?)
            }
        })
    }

    fn classifier(&self) -> Result<Option<HttpStanceClassifier>> {
        self.config
            .classifier
            .as_ref()
            .map(|c| HttpStanceClassifier::new(&c.url, self.retry(), Duration::from_secs(c.timeout_secs)))
            .transpose()
            .map_err(Into::into)
    }

    fn templates(&self) -> Result<PromptTemplates> {
        Ok(match &self.config.prompts_dir {
            Some(dir) => PromptTemplates::with_overrides(dir)?,
            None => PromptTemplates::default(),
        })
    }

    fn load(&self, data: &DatasetArgs) -> Result<Dataset> {
        let name = data.name.clone().unwrap_or_else(|| {
            data.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "custom".into())
        });
        load_dataset(&data.dataset, DatasetTag::parse(&name), &ColumnMapping::default(), self.policy())
            .with_context(|| format!("loading {}", data.dataset.display()))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => HarnessConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    let env = Env { config, cache: cli.cache };
    match cli.command {
        Command::Ingest { input, name, output, id_col, text_col, target_col, stance_col } => {
            let columns = ColumnMapping { id: id_col, text: text_col, target: target_col, stance: stance_col };
            let ds = load_dataset(&input, DatasetTag::parse(&name), &columns, env.policy())?;
            save_dataset(&output, &ds)?;
            print_counts(&ds);
        }
        Command::ConvertVast { input, output, grouping } => {
            let records = read_vast_raw(File::open(&input)?, &VastColumns::default())?;
            let grouping = serde_json::from_value(serde_json::Value::String(grouping.clone()))
                .with_context(|| format!("unknown grouping `{grouping}`"))?;
            let embedder = env.embedder()?;
            let ds = convert_vast_single_target(&records, embedder.as_ref(), grouping, env.policy())?;
            save_dataset(&output, &ds)?;
            println!("{} raw rows -> {} samples", records.len(), ds.len());
            print_counts(&ds);
        }
        Command::ConvertEzstance { input, output } => {
            let records = read_ezstance(File::open(&input)?, &EzStanceColumns::default())?;
            let ds = convert_ezstance(&records, env.policy())?;
            save_dataset(&output, &ds)?;
            println!("{} raw rows -> {} samples", records.len(), ds.len());
            print_counts(&ds);
        }
        Command::Split { data, output_dir } => {
            let ds = env.load(&data)?;
            fs::create_dir_all(&output_dir)?;
            let stem = ds.name.name().to_ascii_lowercase();
            for e in Explicitness::ALL {
                let path = output_dir.join(format!("{stem}_{}.csv", e.as_str().replace('-', "_")));
                save_dataset(&path, &ds.stratum(e))?;
            }
            print_counts(&ds);
        }
        Command::Run { data, approach, models } => run(&env, &data, &approach, &models)?,
        Command::Score { runs } => {
            for dir in runs {
                score(&env, &dir)?;
            }
        }
        Command::SampleHuman { data, output, explicit, non_explicit } => {
            let ds = env.load(&data)?;
            let he = &env.config.humaneval;
            let n_e = explicit.unwrap_or(he.sample_explicit);
            let n_n = non_explicit.unwrap_or(he.sample_non_explicit);
            let sampled = stratified_human_eval_sample(&ds, n_e, n_n, env.config.run.seed)?;
            save_dataset(&output, &sampled)?;
            print_counts(&sampled);
        }
        Command::ExportTasks { runs, data, bundle, key, repetition } => {
            let sampled = env.load(&data)?;
            let mut results = Vec::new();
            for dir in &runs {
                results.extend(read_run_results(dir)?);
            }
            let rep = repetition.unwrap_or(env.config.humaneval.repetition);
            let (b, k) = export_tasks(&results, &sampled, &[], rep, env.config.run.seed)?;
            write_json(&bundle, &b)?;
            write_json(&key, &k)?;
            let slots = b.tasks.first().map_or(0, |t| t.slots.len());
            println!("{} tasks x {} slots; key written to {}", b.tasks.len(), slots, key.display());
        }
        Command::ServeAnnotation { bundle, annotations, addr, static_dir } => {
            let bundle: TaskBundle = read_json(&bundle)?;
            let annotators = &env.config.humaneval.annotators;
            let state = AppState {
                bundle: Arc::new(bundle),
                store: Arc::new(AnnotationStore::open(&annotations)?),
                annotators: (!annotators.is_empty()).then(|| Arc::new(annotators.iter().cloned().collect())),
                clock: Arc::new(SystemClock),
            };
            let static_dir = static_dir.or_else(|| env.config.humaneval.static_dir.clone());
            serve(addr, state, static_dir)?;
        }
        Command::ImportAnnotations { input, annotations, bundle } => {
            let records = read_annotations(File::open(&input)?)?;
            if let Some(path) = bundle {
                let bundle: TaskBundle = read_json(&path)?;
                if let Some(r) = records.iter().find(|r| !bundle.has_slot(&r.sample_id, &r.slot)) {
                    bail!("unknown task slot {}/{}", r.sample_id, r.slot);
                }
            }
            let store = AnnotationStore::open(&annotations)?;
            let n = records.len();
            let changed = store.import(records)?;
            println!("{n} records read, {changed} inserted or updated, store holds {}", store.len());
        }
        Command::Agreement { annotations, key, data, distance, output } => {
            let ds = env.load(&data)?;
            let key: SealedKey = read_json(&key)?;
            let records = AnnotationStore::open(&annotations)?.records();
            let distance: AlphaDistance = distance.parse().map_err(anyhow::Error::msg)?;
            let rows = agreement_report(&records, &key, &ds, distance)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["group", "items", "ratings", "alpha", "kappa", "note"])?;
            for r in &rows {
                let cell = |v: &Result<f64, _>| v.as_ref().map(|x| format!("{x:.4}")).unwrap_or_default();
                let note: Vec<String> =
                    [&r.alpha, &r.kappa].iter().filter_map(|v| v.as_ref().err().map(ToString::to_string)).collect();
                w.write_record([
                    r.label(),
                    r.items.to_string(),
                    r.ratings.to_string(),
                    cell(&r.alpha),
                    cell(&r.kappa),
                    note.join("; "),
                ])?;
            }
            let bytes = w.into_inner()?;
            match output {
                Some(p) => fs::write(&p, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::CalibrateBtsd { data, output } => {
            let ds = env.load(&data)?;
            let Some(clf) = env.classifier()? else {
                bail!("no classifier configured; set [classifier] url in the config");
            };
            let rows = calibration_ladder(&ds, &clf, env.config.run.seed)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["explicitness", "input", "f1"])?;
            for r in &rows {
                w.write_record([r.explicitness.as_str(), &r.input, &format!("{:.2}", r.f1)])?;
            }
            let bytes = w.into_inner()?;
            match output {
                Some(p) => fs::write(&p, &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            println!("ordering gold > alter_gold > incorrect_target > random_vocab: {}", ladder_is_ordered(&rows));
        }
        Command::Report { runs, output, annotations, key, sampled } => {
            report(&env, &runs, &output, annotations.as_deref(), key.as_deref(), sampled.as_deref())?
        }
    }
    Ok(())
}

fn print_counts(ds: &Dataset) {
    let (explicit, non_explicit) = ds.split_counts();
    println!(
        "{}: {} samples ({} explicit, {} non-explicit, {} distinct targets)",
        ds.name,
        ds.len(),
        explicit,
        non_explicit,
        ds.distinct_targets()
    );
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn approaches(arg: &str) -> Result<Vec<Approach>> {
    if arg.eq_ignore_ascii_case("both") {
        return Ok(Approach::ALL.to_vec());
    }
    Ok(vec![arg.parse().map_err(anyhow::Error::msg)?])
}

fn run(env: &Env, data: &DatasetArgs, approach: &str, only: &[String]) -> Result<()> {
    let ds = env.load(data)?;
    let cfg = &env.config;
    let models: Vec<_> = cfg.models.iter().filter(|m| only.is_empty() || only.contains(&m.model_id)).collect();
    if models.is_empty() {
        bail!("no models selected; add [[models]] to the config");
    }
    let templates = env.templates()?;
    let cache_path = env.cache.clone().unwrap_or_else(|| cfg.output_dir.join("cache.jsonl"));
    if let Some(parent) = cache_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let cache = ResponseCache::open(&cache_path)?;
    let clock = SystemClock;
    for model in models {
        let gateway = ChatGateway::http(model.clone(), env.retry(), env.timeout())?;
        for approach in approaches(approach)? {
            let ctx = RunContext { gateway: &gateway, cache: &cache, templates: &templates, settings: &cfg.run, clock: &clock };
            let outcome = run_approach(&ds, &ctx, approach)?;
            let dir = cfg.output_dir.join(outcome.manifest.short_hash());
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("manifest.json"), &outcome.manifest)?;
            write_json(&dir.join("incomplete.json"), &outcome.incomplete)?;
            write_results(File::create(dir.join("results.csv"))?, &outcome.results)?;
            save_dataset(dir.join("dataset.csv"), &ds)?;
            info!(
                "{} {}: {} results, {} incomplete, {} calls, {} cached -> {}",
                model.model_id,
                approach,
                outcome.results.len(),
                outcome.incomplete.len(),
                outcome.chat_calls,
                outcome.cache_hits,
                dir.display()
            );
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn read_run_results(dir: &Path) -> Result<Vec<GeneratedResult>> {
    let path = dir.join("results.csv");
    read_results(File::open(&path).with_context(|| format!("opening {}", path.display()))?)
        .with_context(|| format!("reading {}", path.display()))
}

fn read_run_dataset(env: &Env, dir: &Path, manifest: &RunManifest) -> Result<Dataset> {
    let path = dir.join("dataset.csv");
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_dataset(f, DatasetTag::parse(&manifest.dataset), &ColumnMapping::default(), env.policy())?)
}

fn score(env: &Env, dir: &Path) -> Result<()> {
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    let ds = read_run_dataset(env, dir, &manifest)?;
    let results = read_run_results(dir)?;
    let embedder = env.embedder()?;
    let classifier = env.classifier()?;
    if classifier.is_none() {
        log::warn!("no classifier configured; BTSD is skipped");
    }
    let rows = score_results(&results, &ds, embedder.as_ref(), classifier.as_ref().map(|c| c as &dyn StanceClassifier))?;
    write_scores(File::create(dir.join("scores.csv"))?, &rows)?;
    println!("{}: {} score rows", dir.display(), rows.len());
    Ok(())
}

fn report(
    env: &Env,
    runs: &[PathBuf],
    output: &Path,
    annotations: Option<&Path>,
    key: Option<&Path>,
    sampled: Option<&Path>,
) -> Result<()> {
    let mut values: Vec<(MetricKey, u32, f64)> = Vec::new();
    let mut flags = FlagTally::default();
    let mut repetitions = BTreeSet::new();
    let mut hashes = Vec::new();
    let mut all_results = Vec::new();
    for dir in runs {
        let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
        repetitions.insert(manifest.repetitions);
        hashes.push(manifest.short_hash());
        let scores_path = dir.join("scores.csv");
        let rows: Vec<ScoreRow> = read_scores(
            File::open(&scores_path).with_context(|| format!("{} (run `otsd score` first)", scores_path.display()))?,
        )?;
        values.extend(rows.iter().map(|r| (r.key(), r.repetition, r.value)));
        let results = read_run_results(dir)?;
        flags.truncated += results.iter().filter(|r| r.flags.contains(&ResultFlag::Truncated)).count();
        flags.stance_fallback += results.iter().filter(|r| r.flags.contains(&ResultFlag::StanceFallback)).count();
        let incomplete: Vec<IncompleteSample> = read_json(&dir.join("incomplete.json")).unwrap_or_default();
        flags.incomplete += incomplete.len();
        all_results.extend(results);
    }
    if repetitions.len() != 1 {
        bail!("runs disagree on the repetition count: {repetitions:?}");
    }
    let reps = *repetitions.first().expect("one value");
    let mut metrics: Vec<AggregatedMetric> = aggregate_repetitions(&values, reps)?;

    fs::create_dir_all(output)?;
    let mut he_rows = Vec::new();
    if let (Some(ann), Some(key), Some(sampled)) = (annotations, key, sampled) {
        let key: SealedKey = read_json(key)?;
        let name = metrics.first().map(|m| m.key.dataset.clone()).unwrap_or_else(|| "custom".into());
        let ds = load_dataset(sampled, DatasetTag::parse(&name), &ColumnMapping::default(), env.policy())?;
        let records = AnnotationStore::open(ann)?.records();
        for (g, mean) in he_by_configuration(&records, &key, &ds)? {
            metrics.push(AggregatedMetric {
                key: MetricKey {
                    dataset: ds.name.name().to_string(),
                    model_id: g.model_id,
                    approach: g.approach,
                    explicitness: g.explicitness,
                    metric: "HE".into(),
                },
                per_repetition: vec![mean],
                mean,
            });
        }
        let dist = score_distribution(&final_scores_by_configuration(&records, &key, &ds)?)?;
        write_distribution_csv(File::create(output.join("he_distribution.csv"))?, &dist)?;
        let obs = sample_observations(&records, &key, &ds, &all_results)?;
        he_rows = correlate_per_sample(&obs, "HE");
    }

    hashes.sort();
    let report = build_results_table(&metrics, reps, flags, Some(hashes.join(",")))?;
    write_report_csv(File::create(output.join("results_table.csv"))?, &report)?;
    let grid = render_grid(&report);
    fs::write(output.join("results_table.txt"), &grid)?;
    print!("{grid}");

    let mut corr = Vec::new();
    for quality in ["BTSD", "HE"] {
        corr.extend(correlate_quality_vs_sc(&metrics, quality));
    }
    corr.extend(he_rows);
    write_correlation_csv(File::create(output.join("correlation.csv"))?, &corr)?;
    let by_cell: BTreeMap<String, String> = corr
        .iter()
        .map(|r| (r.label(), r.tau.as_ref().map(|t| format!("{t:.3}")).unwrap_or_else(|e| e.to_string())))
        .collect();
    for (label, tau) in by_cell {
        println!("tau {label}: {tau}");
    }
    Ok(())
}
