use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use super::{
    compare_sample_ids, Approach, Clock, GeneratedResult, IncompleteSample, PipelineError,
    ResultFlag, RunManifest, RunOutcome, RunSettings,
};
use crate::corpus::{Dataset, Sample, StanceLabel};
use crate::gateway::{prompt_hash, CacheEntry, ChatGateway, ResponseCache};
use crate::parsing::{parse_joint, parse_joint_with_fallback, parse_stance, parse_target};
use crate::prompting::{render, PromptBundle, PromptKind, PromptTemplates};

/// Everything a run needs besides the dataset.
pub struct RunContext<'a> {
    pub gateway: &'a ChatGateway,
    pub cache: &'a ResponseCache,
    pub templates: &'a PromptTemplates,
    pub settings: &'a RunSettings,
    pub clock: &'a dyn Clock,
}

type Memo = Mutex<HashMap<String, Arc<OnceLock<Result<String, String>>>>>;

struct Failure {
    step: &'static str,
    error: String,
    /// Endpoint failures get a second chance; parse failures do not.
    retry: bool,
}

#[derive(Default)]
struct UnitLog {
    entries: Vec<CacheEntry>,
    hits: usize,
}

struct Bundles {
    tg: PromptBundle,
    sd: PromptBundle,
    joint: PromptBundle,
}

struct Worker<'a> {
    ctx: &'a RunContext<'a>,
    approach: Approach,
    bundles: Bundles,
    max_words: usize,
}

impl Worker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn fetch(
        &self,
        memo: &Memo,
        log: &mut UnitLog,
        sample: &Sample,
        step: &'static str,
        repetition: u32,
        system: &str,
        user: &str,
    ) -> Result<String, Failure> {
        let model_id = self.ctx.gateway.model_id();
        let hash = prompt_hash(model_id, system, user, repetition);
        if let Some(hit) = self.ctx.cache.get(&hash) {
            log.hits += 1;
            return Ok(hit.response_text);
        }
        let cell = memo.lock().expect("memo lock poisoned").entry(hash.clone()).or_default().clone();
        let mut called = false;
        let outcome = cell.get_or_init(|| {
            called = true;
            self.ctx
                .gateway
                .complete(system, user)
                .map(|x| x.response_text)
                .map_err(|e| e.to_string())
        });
        if !called {
            log.hits += 1;
        }
        match outcome {
            Ok(text) => {
                log.entries.push(CacheEntry {
                    sample_id: sample.id.clone(),
                    model_id: model_id.to_string(),
                    approach: self.approach.as_str().to_string(),
                    step: step.to_string(),
                    repetition,
                    prompt_hash: hash,
                    response_text: text.clone(),
                    timestamp: self.ctx.clock.now(),
                });
                Ok(text.clone())
            }
            Err(e) => Err(Failure { step, error: e.clone(), retry: true }),
        }
    }

    fn unit(
        &self,
        memo: &Memo,
        log: &mut UnitLog,
        sample: &Sample,
        repetition: u32,
    ) -> Result<GeneratedResult, Failure> {
        let prompt_failure = |step, e: crate::prompting::PromptError| Failure {
            step,
            error: e.to_string(),
            retry: false,
        };
        let mut flags = BTreeSet::new();
        let (target, stance) = match self.approach {
            Approach::TgPlusSd => {
                let (system, user) =
                    render(&self.bundles.tg, &sample.text, None).map_err(|e| prompt_failure("TG", e))?;
                let raw = self.fetch(memo, log, sample, "TG", repetition, &system, &user)?;
                let target = parse_target(&raw, self.max_words)
                    .map_err(|e| Failure { step: "TG", error: e.to_string(), retry: false })?;
                if target.truncated {
                    flags.insert(ResultFlag::Truncated);
                }
                let (system, user) = render(&self.bundles.sd, &sample.text, Some(&target.text))
                    .map_err(|e| prompt_failure("SD", e))?;
                let raw = self.fetch(memo, log, sample, "SD", repetition, &system, &user)?;
                let stance = match parse_stance(&raw) {
                    Ok(s) => s,
                    Err(e) if self.ctx.settings.stance_fallback => {
                        log::warn!("sample {} rep {repetition}: {e}; using NONE", sample.id);
                        flags.insert(ResultFlag::StanceFallback);
                        StanceLabel::None
                    }
                    Err(e) => return Err(Failure { step: "SD", error: e.to_string(), retry: false }),
                };
                (target.text, stance)
            }
            Approach::TgAndSd => {
                let (system, user) = render(&self.bundles.joint, &sample.text, None)
                    .map_err(|e| prompt_failure("TG&SD", e))?;
                let raw = self.fetch(memo, log, sample, "TG&SD", repetition, &system, &user)?;
                let parsed = if self.ctx.settings.stance_fallback {
                    parse_joint_with_fallback(&raw, self.max_words).map(|(p, fell_back)| {
                        if fell_back {
                            log::warn!("sample {} rep {repetition}: joint output fallback", sample.id);
                            flags.insert(ResultFlag::StanceFallback);
                        }
                        p
                    })
                } else {
                    parse_joint(&raw, self.max_words)
                };
                let parsed =
                    parsed.map_err(|e| Failure { step: "TG&SD", error: e.to_string(), retry: false })?;
                if parsed.truncated {
                    flags.insert(ResultFlag::Truncated);
                }
                (parsed.target, parsed.stance)
            }
        };
        Ok(GeneratedResult {
            sample_id: sample.id.clone(),
            model_id: self.ctx.gateway.model_id().to_string(),
            approach: self.approach,
            repetition,
            generated_target: target,
            predicted_stance: stance,
            flags,
        })
    }

    /// Runs `units` in chunks of the concurrency bound. Cache writes happen
    /// after each chunk, in unit order, so the cache file is deterministic.
    fn pass(
        &self,
        samples: &[Sample],
        units: &[(usize, u32)],
        hits: &mut usize,
    ) -> Result<Vec<Result<GeneratedResult, Failure>>, PipelineError> {
        let memo: Memo = Mutex::new(HashMap::new());
        let width = self.ctx.settings.concurrency.max(1);
        let mut out = Vec::with_capacity(units.len());
        for chunk in units.chunks(width) {
            let logs: Vec<(Result<GeneratedResult, Failure>, UnitLog)> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&(i, rep)| {
                        let memo = &memo;
                        scope.spawn(move || {
                            let mut log = UnitLog::default();
                            let r = self.unit(memo, &mut log, &samples[i], rep);
                            (r, log)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            for (result, log) in logs {
                *hits += log.hits;
                for entry in log.entries {
                    self.ctx.cache.insert(entry)?;
                }
                out.push(result);
            }
        }
        Ok(out)
    }
}

fn manifest(dataset: &Dataset, ctx: &RunContext<'_>, approach: Approach) -> RunManifest {
    RunManifest::new(dataset, ctx.gateway.config(), approach, ctx.settings, ctx.templates, ctx.clock.now())
}

/// Runs `approach` over every sample and repetition. Units whose calls fail
/// are retried once after the main pass; units that still fail are listed
/// in `incomplete`.
pub fn run_approach(
    dataset: &Dataset,
    ctx: &RunContext<'_>,
    approach: Approach,
) -> Result<RunOutcome, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset(dataset.name.name().to_string()));
    }
    if ctx.settings.repetitions == 0 {
        return Err(PipelineError::NoRepetitions);
    }
    let cap = ctx.gateway.config().target_word_cap();
    let worker = Worker {
        ctx,
        approach,
        bundles: Bundles {
            tg: ctx.templates.build(PromptKind::TargetGeneration, cap)?,
            sd: ctx.templates.build(PromptKind::StanceDetection, cap)?,
            joint: ctx.templates.build(PromptKind::JointTGSD, cap)?,
        },
        max_words: cap as usize,
    };
    let samples = dataset.samples();
    let calls_before = ctx.gateway.call_count();
    let units: Vec<(usize, u32)> = (0..samples.len())
        .flat_map(|i| (1..=ctx.settings.repetitions).map(move |rep| (i, rep)))
        .collect();
    let mut hits = 0;
    let first = worker.pass(samples, &units, &mut hits)?;

    let mut results = Vec::new();
    let mut incomplete = Vec::new();
    let mut retry_units = Vec::new();
    for (unit, outcome) in units.iter().zip(first) {
        match outcome {
            Ok(r) => results.push(r),
            Err(f) if f.retry => retry_units.push(*unit),
            Err(f) => incomplete.push((*unit, f)),
        }
    }
    if !retry_units.is_empty() {
        log::info!("retrying {} failed units", retry_units.len());
        let second = worker.pass(samples, &retry_units, &mut hits)?;
        for (unit, outcome) in retry_units.iter().zip(second) {
            match outcome {
                Ok(r) => results.push(r),
                Err(f) => incomplete.push((*unit, f)),
            }
        }
    }

    results.sort_by(|a, b| {
        compare_sample_ids(&a.sample_id, &b.sample_id).then(a.repetition.cmp(&b.repetition))
    });
    let mut incomplete: Vec<IncompleteSample> = incomplete
        .into_iter()
        .map(|((i, rep), f)| IncompleteSample {
            sample_id: samples[i].id.clone(),
            repetition: rep,
            step: f.step.to_string(),
            error: f.error,
        })
        .collect();
    incomplete.sort_by(|a, b| {
        compare_sample_ids(&a.sample_id, &b.sample_id).then(a.repetition.cmp(&b.repetition))
    });
    for inc in &incomplete {
        log::warn!("sample {} rep {} incomplete at {}: {}", inc.sample_id, inc.repetition, inc.step, inc.error);
    }
    Ok(RunOutcome {
        manifest: manifest(dataset, ctx, approach),
        results,
        incomplete,
        chat_calls: ctx.gateway.call_count() - calls_before,
        cache_hits: hits,
    })
}

/// TG then SD on the generated target: two calls per sample and repetition.
pub fn run_tg_plus_sd(dataset: &Dataset, ctx: &RunContext<'_>) -> Result<RunOutcome, PipelineError> {
    run_approach(dataset, ctx, Approach::TgPlusSd)
}

/// One joint call per sample and repetition.
pub fn run_tg_and_sd(dataset: &Dataset, ctx: &RunContext<'_>) -> Result<RunOutcome, PipelineError> {
    run_approach(dataset, ctx, Approach::TgAndSd)
}

/// The cached exchanges behind `result`, found by re-rendering its prompts.
pub fn trace(
    result: &GeneratedResult,
    sample: &Sample,
    templates: &PromptTemplates,
    cap: u32,
    cache: &ResponseCache,
) -> Result<Vec<CacheEntry>, PipelineError> {
    let mut prompts = Vec::new();
    match result.approach {
        Approach::TgPlusSd => {
            prompts.push(render(&templates.build(PromptKind::TargetGeneration, cap)?, &sample.text, None)?);
            prompts.push(render(
                &templates.build(PromptKind::StanceDetection, cap)?,
                &sample.text,
                Some(&result.generated_target),
            )?);
        }
        Approach::TgAndSd => {
            prompts.push(render(&templates.build(PromptKind::JointTGSD, cap)?, &sample.text, None)?);
        }
    }
    Ok(prompts
        .iter()
        .filter_map(|(s, u)| cache.get(&prompt_hash(&result.model_id, s, u, result.repetition)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetTag, Explicitness};
    use crate::gateway::{AttemptError, ChatRequest, FnTransport, ModelEndpointConfig, RetryPolicy};
    use crate::pipeline::FixedClock;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn dataset(n: usize) -> Dataset {
        let samples = (1..=n)
            .map(|i| Sample {
                id: i.to_string(),
                text: format!("tweet number {i} about taxes"),
                gold_target: "taxes".into(),
                gold_stance: StanceLabel::ALL[i % 3],
                explicitness: Explicitness::Explicit,
                dataset: DatasetTag::Tse,
            })
            .collect();
        Dataset::new(DatasetTag::Tse, samples).unwrap()
    }

    fn gateway<F>(f: F) -> ChatGateway
    where
        F: Fn(&ChatRequest) -> Result<String, AttemptError> + Send + Sync + 'static,
    {
        let mut cfg = ModelEndpointConfig::new("mock-model", "http://localhost:1/v1");
        cfg.requests_per_minute = 1_000_000;
        ChatGateway::new(cfg, Box::new(FnTransport(f)), RetryPolicy::immediate(2)).unwrap()
    }

    fn echo(req: &ChatRequest) -> Result<String, AttemptError> {
        Ok(if req.system_prompt.contains("Stance: <stance>") {
            "Target: taxes, Stance: AGAINST".to_string()
        } else if req.system_prompt.contains("generate a target") {
            "taxes".to_string()
        } else {
            "AGAINST".to_string()
        })
    }

    fn run(ds: &Dataset, gw: &ChatGateway, cache: &ResponseCache, approach: Approach, settings: RunSettings) -> RunOutcome {
        let templates = PromptTemplates::default();
        let clock = FixedClock("2024-01-01T00:00:00Z".into());
        let ctx = RunContext { gateway: gw, cache, templates: &templates, settings: &settings, clock: &clock };
        run_approach(ds, &ctx, approach).unwrap()
    }

    #[test]
    fn call_counts_per_approach() {
        let ds = dataset(1);
        for (approach, calls) in [(Approach::TgPlusSd, 6), (Approach::TgAndSd, 3)] {
            let gw = gateway(echo);
            let cache = ResponseCache::in_memory();
            let out = run(&ds, &gw, &cache, approach, RunSettings::default());
            assert_eq!(out.chat_calls, calls);
            assert_eq!(out.results.len(), 3);
            assert!(out.results.iter().all(|r| r.generated_target == "taxes"
                && r.predicted_stance == StanceLabel::Against));
            assert_eq!(cache.len(), calls);
        }
    }

    #[test]
    fn resume_hits_cache_only() {
        let ds = dataset(5);
        let cache = ResponseCache::in_memory();
        let first = run(&ds, &gateway(echo), &cache, Approach::TgPlusSd, RunSettings::default());
        let gw = gateway(echo);
        let second = run(&ds, &gw, &cache, Approach::TgPlusSd, RunSettings::default());
        assert_eq!(gw.call_count(), 0);
        assert_eq!(second.cache_hits, 30);
        assert_eq!(cache.len(), 30);
        assert_eq!(first.results, second.results);
    }

    #[test]
    fn identical_prompts_called_once() {
        let samples = (1..=4)
            .map(|i| Sample {
                id: i.to_string(),
                text: "same text".into(),
                gold_target: "text".into(),
                gold_stance: StanceLabel::None,
                explicitness: Explicitness::Explicit,
                dataset: DatasetTag::Tse,
            })
            .collect();
        let ds = Dataset::new(DatasetTag::Tse, samples).unwrap();
        let gw = gateway(echo);
        let cache = ResponseCache::in_memory();
        let settings = RunSettings { repetitions: 1, ..RunSettings::default() };
        let out = run(&ds, &gw, &cache, Approach::TgAndSd, settings);
        assert_eq!(out.results.len(), 4);
        assert_eq!(gw.call_count(), 1);
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.entries()[0].sample_id, "1");
    }

    #[test]
    fn transient_failure_retried_at_end() {
        let ds = dataset(3);
        let failures = Arc::new(AtomicUsize::new(0));
        let f = failures.clone();
        let gw = gateway(move |req: &ChatRequest| {
            if req.user_content.contains("number 2 ") && f.fetch_add(1, Ordering::SeqCst) < 2 {
                return Err(AttemptError::transient(Some(503), "unavailable"));
            }
            echo(req)
        });
        let cache = ResponseCache::in_memory();
        let settings = RunSettings { repetitions: 1, concurrency: 1, ..RunSettings::default() };
        let out = run(&ds, &gw, &cache, Approach::TgAndSd, settings);
        assert!(out.incomplete.is_empty());
        assert_eq!(out.results.len(), 3);
    }

    #[test]
    fn persistent_failure_marks_incomplete() {
        let ds = dataset(3);
        let gw = gateway(|req: &ChatRequest| {
            if req.user_content.contains("number 2 ") {
                Err(AttemptError::transient(Some(500), "down"))
            } else {
                echo(req)
            }
        });
        let cache = ResponseCache::in_memory();
        let settings = RunSettings { repetitions: 2, ..RunSettings::default() };
        let out = run(&ds, &gw, &cache, Approach::TgPlusSd, settings);
        assert_eq!(out.results.len(), 4);
        assert_eq!(out.incomplete.len(), 2);
        assert!(out.incomplete.iter().all(|i| i.sample_id == "2" && i.step == "TG"));
    }

    #[test]
    fn joint_fallback_policy() {
        let ds = dataset(1);
        let settings = |fallback| RunSettings { repetitions: 1, stance_fallback: fallback, ..RunSettings::default() };
        let out = run(&ds, &gateway(|_: &ChatRequest| Ok("I think it's favorable".into())), &ResponseCache::in_memory(), Approach::TgAndSd, settings(false));
        assert_eq!(out.results.len(), 0);
        assert_eq!(out.incomplete.len(), 1);
        let out = run(&ds, &gateway(|_: &ChatRequest| Ok("Target: taxes, Stance: unclear".into())), &ResponseCache::in_memory(), Approach::TgAndSd, settings(true));
        assert_eq!(out.results[0].predicted_stance, StanceLabel::None);
        assert!(out.results[0].flags.contains(&ResultFlag::StanceFallback));
    }

    #[test]
    fn long_targets_flagged() {
        let ds = dataset(1);
        let gw = gateway(|req: &ChatRequest| {
            Ok(if req.system_prompt.contains("generate a target") {
                "the very long generated target phrase".into()
            } else {
                "FAVOR".into()
            })
        });
        let out = run(&ds, &gw, &ResponseCache::in_memory(), Approach::TgPlusSd, RunSettings::default());
        assert_eq!(out.results[0].generated_target, "the very long generated");
        assert_eq!(out.flag_count(ResultFlag::Truncated), 3);
    }

    #[test]
    fn results_trace_to_cache() {
        let ds = dataset(2);
        let cache = ResponseCache::in_memory();
        let gw = gateway(echo);
        let out = run(&ds, &gw, &cache, Approach::TgPlusSd, RunSettings::default());
        let templates = PromptTemplates::default();
        for r in &out.results {
            let sample = ds.get(&r.sample_id).unwrap();
            let entries = trace(r, sample, &templates, 4, &cache).unwrap();
            assert_eq!(entries.len(), 2);
            assert!(entries.iter().all(|e| e.repetition == r.repetition));
        }
    }
}
