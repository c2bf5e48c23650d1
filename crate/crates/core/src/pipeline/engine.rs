use std::sync::Arc;
use std::time::Instant;

use crate::detection::{
    answer_variants, decide, diversify, score_cross_language, score_cross_model, score_hybrid,
    ConsistencyReport, Decision, EquivalenceVerdict, Language, Producer, QAPair,
};
use crate::exec::Executor;
use crate::prompts::PromptTemplates;
use crate::providers::{
    CallTally, ChatBackend, HttpBackend, Provider, ResponseCache, ScriptedBackend,
};
use crate::retrieval::{
    reformulate, search, EvidenceBundle, LocalCorpus, RetrievalError, Retriever, SearchHit,
    WebSearchClient,
};
use crate::stage::StageContext;

use super::config::{BackendSpec, Mode, PerturbationTarget, PipelineConfig, RetrieverSpec};
use super::record::{
    AnswerTrace, DatasetRecord, RuntimeStats, TraceStatus, FLAG_EXTRACTION_FALLBACK,
    FLAG_RETRIEVAL_EMPTY,
};
use super::store::RunStore;
use super::PipelineError;

/// Retriever that never finds anything.
#[derive(Debug, Default)]
pub struct NullRetriever;

impl Retriever for NullRetriever {
    fn search(&self, _query: &str, _limit: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        Ok(Vec::new())
    }

    fn calls(&self) -> u64 {
        0
    }

    fn describe(&self) -> String {
        "disabled".into()
    }
}

/// Final sentence of `text`, used when concise-answer extraction fails.
pub fn last_sentence(text: &str) -> String {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?' | '。' | '！' | '？' | '\n') {
            let s = current.trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences.pop().unwrap_or_default()
}

/// A configured pipeline bound to its providers and retriever.
pub struct Engine {
    config: PipelineConfig,
    templates: PromptTemplates,
    answerer: Provider,
    verifier: Provider,
    retriever: Arc<dyn Retriever>,
    exec: Executor,
}

fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn ChatBackend>, PipelineError> {
    Ok(match spec {
        BackendSpec::Scripted { script } => Arc::new(ScriptedBackend::from_file(script)?),
        BackendSpec::Http(cfg) => Arc::new(HttpBackend::new(cfg.clone())?),
    })
}

fn build_retriever(spec: &RetrieverSpec) -> Result<Arc<dyn Retriever>, PipelineError> {
    Ok(match spec {
        RetrieverSpec::Corpus { dir } => Arc::new(LocalCorpus::open(dir)?),
        RetrieverSpec::Web(cfg) => Arc::new(WebSearchClient::new(cfg.clone())?),
        RetrieverSpec::Disabled => Arc::new(NullRetriever),
    })
}

impl Engine {
    pub fn new(
        config: PipelineConfig,
        templates: PromptTemplates,
        answerer: Provider,
        verifier: Provider,
        retriever: Arc<dyn Retriever>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        templates.validate()?;
        let exec = Executor::new(config.parallelism);
        Ok(Self {
            answerer: answerer.with_executor(exec.clone()),
            verifier: verifier.with_executor(exec.clone()),
            config,
            templates,
            retriever,
            exec,
        })
    }

    /// Build providers, cache and retriever as described by `config`.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let templates = match &config.templates {
            Some(path) => PromptTemplates::load(path)?,
            None => PromptTemplates::default(),
        };
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ResponseCache::open(dir)?)),
            None => None,
        };
        let answerer_backend = build_backend(&config.answerer.backend)?;
        let verifier_backend = if config.verifier.backend == config.answerer.backend {
            Arc::clone(&answerer_backend)
        } else {
            build_backend(&config.verifier.backend)?
        };
        let mut answerer = Provider::new(config.answerer.model.clone(), answerer_backend);
        let mut verifier = Provider::new(config.verifier.model.clone(), verifier_backend);
        if let Some(cache) = cache {
            answerer = answerer.with_cache(Arc::clone(&cache));
            verifier = verifier.with_cache(cache);
        }
        let retriever = build_retriever(&config.retriever)?;
        Self::new(config.clone(), templates, answerer, verifier, retriever)
    }

    /// Same providers and retriever under different tunables.
    pub fn reconfigured(&self, config: PipelineConfig) -> Result<Self, PipelineError> {
        Self::new(
            config,
            self.templates.clone(),
            self.answerer.clone(),
            self.verifier.clone(),
            Arc::clone(&self.retriever),
        )
    }

    /// Same setup with a different verifier model.
    pub fn with_verifier(&self, verifier: Provider) -> Result<Self, PipelineError> {
        let mut config = self.config.clone();
        config.verifier.model = verifier.model_id().to_string();
        Self::new(
            config,
            self.templates.clone(),
            self.answerer.clone(),
            verifier,
            Arc::clone(&self.retriever),
        )
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn answerer(&self) -> &Provider {
        &self.answerer
    }

    pub fn verifier(&self) -> &Provider {
        &self.verifier
    }

    pub fn retriever(&self) -> &Arc<dyn Retriever> {
        &self.retriever
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    fn context<'a>(&'a self, tally: &'a CallTally) -> StageContext<'a> {
        StageContext {
            templates: &self.templates,
            answerer: &self.answerer,
            verifier: &self.verifier,
            languages: &self.config.languages,
            temperatures: self.config.temperatures,
            tally,
        }
    }

    /// Reasoned thought followed by a concise-answer extraction call.
    /// Returns `(thought, answer, used_fallback)`.
    pub fn initial_answer(
        &self,
        ctx: &StageContext<'_>,
        question: &str,
    ) -> Result<(String, String, bool), PipelineError> {
        if question.trim().is_empty() {
            return Err(PipelineError::Config("question is empty".into()));
        }
        let cot = ctx.greedy(ctx.answerer, self.templates.cot_messages(question));
        let thought = ctx.call(ctx.answerer, &cot)?.text;
        let concise = ctx.greedy(
            ctx.answerer,
            self.templates.concise_messages(question, &thought),
        );
        match ctx.call(ctx.answerer, &concise) {
            Ok(r) if !r.text.trim().is_empty() => Ok((thought, r.text.trim().to_string(), false)),
            other => {
                if let Err(e) = other {
                    log::warn!("concise answer extraction failed: {e}");
                }
                let fallback = last_sentence(&thought);
                Ok((thought, fallback, true))
            }
        }
    }

    /// Revise the initial answer against the evidence. `None` for an empty bundle.
    pub fn repair(
        &self,
        ctx: &StageContext<'_>,
        question: &str,
        thought: &str,
        initial: &str,
        evidence: &EvidenceBundle,
    ) -> Result<Option<String>, PipelineError> {
        if evidence.is_empty() {
            return Ok(None);
        }
        let messages =
            self.templates
                .repair_messages(question, thought, initial, &evidence.render());
        let reply = ctx.call(ctx.answerer, &ctx.greedy(ctx.answerer, messages))?;
        Ok(Some(reply.text.trim().to_string()))
    }

    fn fixed_report(&self, decision: Decision) -> ConsistencyReport {
        ConsistencyReport {
            z_cl: None,
            z_cm: None,
            alpha: self.config.alpha,
            z_hybrid: None,
            verdicts_cl: Vec::new(),
            verdicts_cm: Vec::new(),
            gated_score: None,
            threshold: None,
            decision,
        }
    }

    fn detect(
        &self,
        ctx: &StageContext<'_>,
        trace: &mut AnswerTrace,
    ) -> Result<ConsistencyReport, PipelineError> {
        let mode = self.config.mode;
        let probes: Vec<String> = match self.config.perturbation_target {
            PerturbationTarget::Variants => trace
                .perturbations
                .as_ref()
                .map(|p| p.variants.clone())
                .unwrap_or_default(),
            PerturbationTarget::Original => vec![trace.record.question.clone()],
        };
        let source = answer_variants(ctx, &probes, Language::Source, Producer::Answerer);

        type Branch = Option<(
            Vec<QAPair>,
            Result<(f64, Vec<EquivalenceVerdict>), PipelineError>,
        )>;
        let (cl, cm): (Branch, Branch) = self.exec.join(
            || {
                mode.uses_cross_language().then(|| {
                    let target =
                        answer_variants(ctx, &probes, Language::Target, Producer::Answerer);
                    let scored = score_cross_language(ctx, &source, &target).map_err(Into::into);
                    (target, scored)
                })
            },
            || {
                mode.uses_cross_model().then(|| {
                    let other = answer_variants(ctx, &probes, Language::Source, Producer::Verifier);
                    let scored = score_cross_model(ctx, &source, &other).map_err(Into::into);
                    (other, scored)
                })
            },
        );
        trace.qa_pairs.source = source;

        let mut report = self.fixed_report(Decision::AcceptInitial);
        if let Some((pairs, scored)) = cl {
            trace.qa_pairs.target = pairs;
            let (z, verdicts) = scored?;
            report.z_cl = Some(z);
            report.verdicts_cl = verdicts;
        }
        if let Some((pairs, scored)) = cm {
            trace.qa_pairs.verifier = pairs;
            let (z, verdicts) = scored?;
            report.z_cm = Some(z);
            report.verdicts_cm = verdicts;
        }
        if let (Mode::Hybrid, Some(zl), Some(zm)) = (mode, report.z_cl, report.z_cm) {
            report.z_hybrid = Some(score_hybrid(zl, zm, self.config.alpha)?);
        }
        let gated = match mode {
            Mode::Cl => report.z_cl,
            Mode::Cm => report.z_cm,
            _ => report.z_hybrid,
        }
        .ok_or_else(|| PipelineError::Config(format!("mode {mode} produced no score")))?;
        let threshold = self
            .config
            .threshold()
            .ok_or_else(|| PipelineError::Config(format!("mode {mode} has no threshold")))?;
        report.gated_score = Some(gated);
        report.threshold = Some(threshold);
        report.decision = decide(gated, threshold);
        Ok(report)
    }

    fn retrieve_and_repair(
        &self,
        ctx: &StageContext<'_>,
        trace: &mut AnswerTrace,
    ) -> Result<(), PipelineError> {
        let variants = trace
            .perturbations
            .as_ref()
            .map(|p| p.variants.clone())
            .unwrap_or_else(|| vec![trace.record.question.clone()]);
        let queries = reformulate(ctx, &variants);
        trace.counters.retrieval_calls = queries.len() as u64;
        trace.queries = queries;
        let bundle = search(
            &trace.queries,
            &*self.retriever,
            &self.config.search,
            &self.exec,
        )?;
        let initial = trace.initial_answer.clone().unwrap_or_default();
        let repaired = self.repair(
            ctx,
            &trace.record.question,
            trace.thought.as_deref().unwrap_or_default(),
            &initial,
            &bundle,
        )?;
        trace.evidence = Some(bundle);
        match repaired {
            Some(r) => {
                trace.final_answer = Some(r.clone());
                trace.repaired_answer = Some(r);
            }
            None => {
                trace.flags.push(FLAG_RETRIEVAL_EMPTY.into());
                trace.final_answer = Some(initial);
            }
        }
        Ok(())
    }

    fn run_stages(
        &self,
        ctx: &StageContext<'_>,
        trace: &mut AnswerTrace,
    ) -> Result<(), PipelineError> {
        let question = trace.record.question.clone();
        let (thought, initial, fell_back) = self.initial_answer(ctx, &question)?;
        trace.thought = Some(thought);
        trace.initial_answer = Some(initial.clone());
        if fell_back {
            trace.flags.push(FLAG_EXTRACTION_FALLBACK.into());
        }

        let mode = self.config.mode;
        if mode == Mode::NeverRetrieve {
            trace.consistency = Some(self.fixed_report(Decision::AcceptInitial));
            trace.final_answer = Some(initial);
            return Ok(());
        }

        trace.perturbations = Some(diversify(ctx, &question, self.config.k)?);
        let report = if mode == Mode::AlwaysRetrieve {
            self.fixed_report(Decision::Retrieve)
        } else {
            self.detect(ctx, trace)?
        };
        let decision = report.decision;
        trace.consistency = Some(report);
        match decision {
            Decision::AcceptInitial => {
                trace.final_answer = Some(initial);
                Ok(())
            }
            Decision::Retrieve => self.retrieve_and_repair(ctx, trace),
        }
    }

    /// Run all stages for one record. Failures are recorded in the trace.
    pub fn run_question(&self, record: &DatasetRecord) -> AnswerTrace {
        let started = Instant::now();
        let tally = CallTally::new();
        let ctx = self.context(&tally);
        let mut trace = AnswerTrace::new(record, self.config.mode);
        if let Err(e) = self.run_stages(&ctx, &mut trace) {
            log::warn!("question {} failed: {e}", record.id);
            trace.status = TraceStatus::Error;
            trace.error = Some(e.to_string());
        }
        trace.counters.llm_calls = tally.requests();
        trace.runtime = RuntimeStats {
            cache_hits: tally.cache_hits(),
            backend_calls: tally.backend_calls(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        trace
    }

    /// Traces for every record, in input order.
    pub fn run_dataset(&self, records: &[DatasetRecord]) -> Vec<AnswerTrace> {
        self.exec.map(records, |r| self.run_question(r))
    }

    /// Like [`Engine::run_dataset`], writing each trace as soon as it
    /// completes and the manifest at the end.
    pub fn run_dataset_into(
        &self,
        records: &[DatasetRecord],
        store: &RunStore,
    ) -> Result<Vec<AnswerTrace>, PipelineError> {
        store.create()?;
        let traces = self.exec.map(records, |r| {
            let trace = self.run_question(r);
            if let Err(e) = store.write_trace(&trace) {
                log::error!("could not persist trace {}: {e}", r.id);
            }
            trace
        });
        store.finish(&self.config, &traces)?;
        Ok(traces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_sentence_picks_the_tail() {
        assert_eq!(
            last_sentence("Sydney is large. But the capital is Canberra."),
            "But the capital is Canberra."
        );
        assert_eq!(last_sentence("no terminator here"), "no terminator here");
        assert_eq!(last_sentence("First.\nSecond"), "Second");
        assert_eq!(last_sentence("  "), "");
    }
}
