//! Closed-world simulator.
//!
//! A [`WorldSpec`] describes a population of yes/no questions. Each question
//! is either known to the simulated answerer (its initial answer is right)
//! or unknown (its initial answer is wrong). Every equivalence check on a
//! question comes out equivalent with probability `consistency_fidelity`
//! when known and `confusion_rate` when unknown, independently per
//! perturbation index. The corpus holds one document per question, which
//! states the wrong answer with probability `retrieval_noise`; repair always
//! follows the evidence.
//!
//! [`generate_world`] renders this into the dataset, provider script and
//! corpus formats the pipeline reads, so a world is consumed by the real
//! engine. [`expected_accuracy`] gives the closed-form accuracy under the
//! same model.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{score_hybrid, Decision};
use crate::eval::Attribution;
use crate::pipeline::{
    write_dataset, BackendSpec, DatasetRecord, Engine, Mode, PerturbationTarget, PipelineConfig,
    PipelineError, ProviderSpec, RetrieverSpec, YesNo,
};
use crate::prompts::{format_qa, PromptTemplates};
use crate::providers::{
    Message, Provider, ProviderError, ResponseCache, Script, ScriptEntry, ScriptedBackend,
};
use crate::retrieval::{assemble, CorpusDocument, LocalCorpus, SearchHit};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("script does not cover {} question(s), first {first}: {message}", ids.len())]
    ClosureViolation {
        ids: Vec<String>,
        first: String,
        message: String,
    },
    #[error("worlds cannot be merged: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_questions: usize,
    /// Fraction of questions the answerer knows.
    pub coverage: f64,
    /// Probability that a check on a known question comes out equivalent.
    pub consistency_fidelity: f64,
    /// Probability that a check on an unknown question comes out equivalent.
    pub confusion_rate: f64,
    /// Probability that a question's evidence is misleading.
    pub retrieval_noise: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_questions: 100,
            coverage: 0.6,
            consistency_fidelity: 0.9,
            confusion_rate: 0.2,
            retrieval_noise: 0.3,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("coverage", self.coverage),
            ("consistency_fidelity", self.consistency_fidelity),
            ("confusion_rate", self.confusion_rate),
            ("retrieval_noise", self.retrieval_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidSpec(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth behind one generated question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTruth {
    pub id: String,
    pub gold: YesNo,
    pub known: bool,
    pub misleading: bool,
    /// Scripted cross-language verdicts per probe index.
    pub verdicts_cl: Vec<bool>,
    /// Scripted cross-model verdicts per probe index.
    pub verdicts_cm: Vec<bool>,
}

fn share(verdicts: &[bool], k: usize) -> f64 {
    verdicts[..k].iter().filter(|v| **v).count() as f64 / k as f64
}

impl QuestionTruth {
    /// Gate decision the pipeline should reach under `config`.
    pub fn expected_decision(&self, config: &PipelineConfig) -> Decision {
        let k = Gate::from_config(config).k;
        let z = match config.mode {
            Mode::NeverRetrieve => return Decision::AcceptInitial,
            Mode::AlwaysRetrieve => return Decision::Retrieve,
            Mode::Cl => share(&self.verdicts_cl, k),
            Mode::Cm => share(&self.verdicts_cm, k),
            Mode::Hybrid => {
                share(&self.verdicts_cl, k) + config.alpha * share(&self.verdicts_cm, k)
            }
        };
        if z < config.threshold().unwrap_or(f64::INFINITY) {
            Decision::Retrieve
        } else {
            Decision::AcceptInitial
        }
    }

    /// Whether the final answer is right after `decision`.
    pub fn expected_correct(&self, decision: Decision) -> bool {
        match decision {
            Decision::AcceptInitial => self.known,
            Decision::Retrieve => !self.misleading,
        }
    }

    /// Cause of the outcome: internal for a wrong answer kept without
    /// retrieval, external for a wrong answer after misleading evidence.
    pub fn expected_attribution(&self, decision: Decision) -> Attribution {
        if self.expected_correct(decision) {
            Attribution::Correct
        } else if decision == Decision::AcceptInitial {
            Attribution::Internal
        } else {
            Attribution::External
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedWorld {
    pub spec: WorldSpec,
    pub records: Vec<DatasetRecord>,
    script: Script,
    pub corpus: Vec<CorpusDocument>,
    pub truth: Vec<QuestionTruth>,
    compiled: CompiledScript,
}

/// Lazily compiled script shared by every engine built from one world.
/// Invisible to clone and equality.
#[derive(Default)]
struct CompiledScript(OnceLock<ScriptedBackend>);

impl Clone for CompiledScript {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PartialEq for CompiledScript {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl std::fmt::Debug for CompiledScript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0.get().is_some() {
            "compiled"
        } else {
            "pending"
        })
    }
}

/// The gating rule seen by [`expected_accuracy`]: mode, effective number of
/// probes, and cross-model weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub mode: Mode,
    pub k: usize,
    pub alpha: f64,
}

impl Gate {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            mode: config.mode,
            k: match config.perturbation_target {
                PerturbationTarget::Variants => config.k,
                PerturbationTarget::Original => 1,
            },
            alpha: config.alpha,
        }
    }
}

fn binomial_pmf(k: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; k + 1];
    let mut coeff = 1.0;
    for (x, slot) in pmf.iter_mut().enumerate() {
        if x > 0 {
            coeff = coeff * (k + 1 - x) as f64 / x as f64;
        }
        *slot = coeff * p.powi(x as i32) * (1.0 - p).powi((k - x) as i32);
    }
    pmf
}

/// Probability that a question whose checks succeed with probability `p`
/// is accepted without retrieval.
pub fn acceptance_probability(gate: &Gate, p: f64, threshold: f64) -> f64 {
    let k = gate.k;
    let share = |x: usize| x as f64 / k as f64;
    let pmf = binomial_pmf(k, p);
    match gate.mode {
        Mode::NeverRetrieve => 1.0,
        Mode::AlwaysRetrieve => 0.0,
        Mode::Cl | Mode::Cm => (0..=k)
            .filter(|&x| share(x) >= threshold)
            .map(|x| pmf[x])
            .sum(),
        Mode::Hybrid => {
            let mut total = 0.0;
            for x in 0..=k {
                for y in 0..=k {
                    let z =
                        score_hybrid(share(x), share(y), gate.alpha).expect("shares lie in [0, 1]");
                    if z >= threshold {
                        total += pmf[x] * pmf[y];
                    }
                }
            }
            total
        }
    }
}

/// Closed-form accuracy of the pipeline on worlds drawn from `spec`.
pub fn expected_accuracy(spec: &WorldSpec, gate: &Gate, threshold: f64) -> f64 {
    let clean = 1.0 - spec.retrieval_noise;
    let a_known = acceptance_probability(gate, spec.consistency_fidelity, threshold);
    let a_unknown = acceptance_probability(gate, spec.confusion_rate, threshold);
    spec.coverage * (a_known + (1.0 - a_known) * clean)
        + (1.0 - spec.coverage) * (1.0 - a_unknown) * clean
}

/// Closed-form fraction of questions routed to retrieval.
pub fn expected_retrieval_rate(spec: &WorldSpec, gate: &Gate, threshold: f64) -> f64 {
    let a_known = acceptance_probability(gate, spec.consistency_fidelity, threshold);
    let a_unknown = acceptance_probability(gate, spec.confusion_rate, threshold);
    spec.coverage * (1.0 - a_known) + (1.0 - spec.coverage) * (1.0 - a_unknown)
}

fn stance(label: YesNo) -> &'static str {
    match label {
        YesNo::Yes => "Yes",
        YesNo::No => "No",
    }
}

struct Writer<'a> {
    templates: &'a PromptTemplates,
    config: &'a PipelineConfig,
    entries: Vec<ScriptEntry>,
}

impl Writer<'_> {
    fn add(&mut self, model: &str, sample: Option<u32>, messages: Vec<Message>, response: String) {
        self.entries.push(ScriptEntry {
            model: Some(model.to_string()),
            sample_index: sample,
            messages,
            response,
        });
    }

    fn question(&mut self, i: usize, truth: &QuestionTruth) -> (DatasetRecord, CorpusDocument) {
        let cfg = self.config;
        let t = self.templates;
        let answerer = cfg.answerer.model.as_str();
        let verifier = cfg.verifier.model.as_str();
        let target = cfg.languages.target.as_str();
        let key = format!("key{i:05}");
        let question = format!("Does record {key} satisfy its stated property?");
        let initial = if truth.known {
            truth.gold
        } else {
            truth.gold.flip()
        };
        let evidence_says = if truth.misleading {
            truth.gold.flip()
        } else {
            truth.gold
        };

        let thought = format!(
            "Recalling what I know about record {key}, the property {}. Therefore the answer is {}.",
            if initial == YesNo::Yes { "holds" } else { "does not hold" },
            initial
        );
        let r0 = format!("{}.", stance(initial));
        self.add(answerer, None, t.cot_messages(&question), thought.clone());
        self.add(
            answerer,
            None,
            t.concise_messages(&question, &thought),
            r0.clone(),
        );

        let variants: Vec<String> = (1..=cfg.k)
            .map(|j| {
                format!("Variant {j}: would you say record {key} satisfies its stated property?")
            })
            .collect();
        let listing: Vec<String> = variants
            .iter()
            .enumerate()
            .map(|(j, v)| format!("{}. {v}", j + 1))
            .collect();
        self.add(
            answerer,
            Some(0),
            t.diversify_messages(&question, cfg.k),
            listing.join("\n"),
        );

        let probes: Vec<String> = match cfg.perturbation_target {
            PerturbationTarget::Variants => variants.clone(),
            PerturbationTarget::Original => vec![question.clone()],
        };
        for (j, probe) in probes.iter().enumerate() {
            let a_src = format!("{}, as far as I recall (probe {}).", stance(initial), j + 1);
            let translated = format!("[{target}] {probe}");
            let a_tgt = format!("[{target}] {}", stance(initial));
            let a_ver = format!("{} (independent check {}).", stance(initial), j + 1);
            self.add(answerer, None, t.answer_messages(probe), a_src.clone());
            self.add(verifier, None, t.answer_messages(probe), a_ver.clone());
            self.add(
                answerer,
                None,
                t.translate_messages(probe, target),
                translated.clone(),
            );
            self.add(
                answerer,
                None,
                t.answer_in_language_messages(&translated, target),
                a_tgt.clone(),
            );
            let verdict = |v: bool| if v { "True" } else { "False" }.to_string();
            self.add(
                answerer,
                None,
                t.check_cross_language_messages(
                    &format_qa(probe, "A", &a_src),
                    &format_qa(&translated, "B", &a_tgt),
                    &cfg.languages.source,
                    target,
                ),
                verdict(truth.verdicts_cl[j]),
            );
            self.add(
                answerer,
                None,
                t.check_cross_model_messages(
                    &format_qa(probe, "A", &a_src),
                    &format_qa(probe, "A", &a_ver),
                ),
                verdict(truth.verdicts_cm[j]),
            );
        }

        for v in &variants {
            self.add(answerer, None, t.reformulate_messages(v), key.clone());
        }
        let doc = CorpusDocument {
            id: format!("doc-{key}"),
            title: String::new(),
            text: format!("Archive entry {key}: the answer is {evidence_says}."),
        };
        let hit = SearchHit {
            title: None,
            text: doc.text.clone(),
            source: doc.id.clone(),
        };
        let per_query = (0..variants.len())
            .map(|j| (j, vec![hit.clone()]))
            .collect();
        let bundle = assemble(per_query, &cfg.search);
        if !bundle.is_empty() {
            self.add(
                answerer,
                None,
                t.repair_messages(&question, &thought, &r0, &bundle.render()),
                format!("{}.", stance(evidence_says)),
            );
        }

        let record = DatasetRecord::yes_no(truth.id.clone(), question, truth.gold);
        (record, doc)
    }
}

fn draw_truth(spec: &WorldSpec, i: usize, probes: usize) -> QuestionTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let known = rng.gen_bool(spec.coverage);
    let gold = if rng.gen_bool(0.5) {
        YesNo::Yes
    } else {
        YesNo::No
    };
    let misleading = rng.gen_bool(spec.retrieval_noise);
    let p = if known {
        spec.consistency_fidelity
    } else {
        spec.confusion_rate
    };
    // Interleaved so that smaller k sees a prefix of the same draws.
    let (mut cl, mut cm) = (Vec::with_capacity(probes), Vec::with_capacity(probes));
    for _ in 0..probes {
        cl.push(rng.gen_bool(p));
        cm.push(rng.gen_bool(p));
    }
    QuestionTruth {
        id: format!("q{i:05}"),
        gold,
        known,
        misleading,
        verdicts_cl: cl,
        verdicts_cm: cm,
    }
}

fn load_templates(config: &PipelineConfig) -> Result<PromptTemplates, SimError> {
    Ok(match &config.templates {
        Some(p) => PromptTemplates::load(p).map_err(PipelineError::from)?,
        None => PromptTemplates::default(),
    })
}

/// Materialise a world for `config`'s k, languages, models and
/// perturbation target, then check that the script covers every prompt
/// the pipeline can issue.
pub fn generate_world(
    spec: &WorldSpec,
    config: &PipelineConfig,
) -> Result<ScriptedWorld, SimError> {
    spec.validate()?;
    config.validate()?;
    if config.answerer.model == config.verifier.model {
        return Err(SimError::InvalidSpec(
            "answerer and verifier need distinct model ids".into(),
        ));
    }
    let templates = load_templates(config)?;
    let probes = Gate::from_config(config).k;
    let mut writer = Writer {
        templates: &templates,
        config,
        entries: Vec::new(),
    };
    let mut records = Vec::with_capacity(spec.n_questions);
    let mut corpus = Vec::with_capacity(spec.n_questions);
    let mut truth = Vec::with_capacity(spec.n_questions);
    for i in 0..spec.n_questions {
        let t = draw_truth(spec, i, probes);
        let (record, doc) = writer.question(i, &t);
        records.push(record);
        corpus.push(doc);
        truth.push(t);
    }
    let world = ScriptedWorld {
        spec: *spec,
        records,
        script: Script {
            entries: writer.entries,
            rules: Vec::new(),
        },
        corpus,
        truth,
        compiled: CompiledScript::default(),
    };
    world.verify_closure(config)?;
    Ok(world)
}

impl ScriptedWorld {
    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Mutable access to the script; drops the compiled form.
    pub fn script_mut(&mut self) -> &mut Script {
        self.compiled = CompiledScript::default();
        &mut self.script
    }

    fn backend(&self) -> Result<ScriptedBackend, SimError> {
        if let Some(b) = self.compiled.0.get() {
            return Ok(b.fork());
        }
        let built = ScriptedBackend::new(self.script.clone())?;
        Ok(self.compiled.0.get_or_init(|| built).fork())
    }

    /// Engine over this world's script and corpus, ignoring the backend,
    /// retriever and cache settings in `config`.
    pub fn engine(
        &self,
        config: &PipelineConfig,
        cache: Option<Arc<ResponseCache>>,
    ) -> Result<Engine, SimError> {
        let backend = Arc::new(self.backend()?);
        let mut answerer = Provider::new(config.answerer.model.clone(), backend.clone());
        let mut verifier = Provider::new(config.verifier.model.clone(), backend);
        if let Some(cache) = cache {
            answerer = answerer.with_cache(cache.clone());
            verifier = verifier.with_cache(cache);
        }
        let retriever = Arc::new(LocalCorpus::new(self.corpus.clone()));
        Ok(Engine::new(
            config.clone(),
            load_templates(config)?,
            answerer,
            verifier,
            retriever,
        )?)
    }

    /// Run every question through both detection branches and the repair
    /// path; any missing script entry is a [`SimError::ClosureViolation`].
    pub fn verify_closure(&self, config: &PipelineConfig) -> Result<(), SimError> {
        let mut probe = config.clone();
        probe.mode = Mode::Hybrid;
        probe.thresholds.hybrid = f64::INFINITY;
        let engine = self.engine(&probe, None)?;
        let traces = engine.run_dataset(&self.records);
        let failed: Vec<_> = traces.iter().filter(|t| t.is_error()).collect();
        match failed.first() {
            None => Ok(()),
            Some(first) => Err(SimError::ClosureViolation {
                ids: failed.iter().map(|t| t.id().to_string()).collect(),
                first: first.id().to_string(),
                message: first.error.clone().unwrap_or_default(),
            }),
        }
    }

    /// Pipeline config reading this world from `dir` once written there.
    pub fn config_for(base: &PipelineConfig, dir: &Path) -> PipelineConfig {
        let mut cfg = base.clone();
        let script = BackendSpec::Scripted {
            script: dir.join("script.json"),
        };
        cfg.answerer = ProviderSpec {
            model: base.answerer.model.clone(),
            backend: script.clone(),
        };
        cfg.verifier = ProviderSpec {
            model: base.verifier.model.clone(),
            backend: script,
        };
        cfg.retriever = RetrieverSpec::Corpus {
            dir: dir.join("corpus"),
        };
        cfg.cache_dir = Some(dir.join("cache"));
        cfg.runs_dir = dir.join("runs");
        cfg
    }

    /// Write `dataset.jsonl`, `script.json`, `corpus/`, `truth.jsonl`,
    /// `world.toml` and a ready-to-run `config.toml` under `dir`.
    pub fn write(&self, dir: &Path, base: &PipelineConfig) -> Result<PathBuf, SimError> {
        fs::create_dir_all(dir)?;
        write_dataset(&dir.join("dataset.jsonl"), &self.records)?;
        self.script.save(&dir.join("script.json"))?;
        LocalCorpus::write(&dir.join("corpus"), &self.corpus)?;
        let mut truth = String::new();
        for t in &self.truth {
            truth.push_str(&serde_json::to_string(t).map_err(std::io::Error::other)?);
            truth.push('\n');
        }
        fs::write(dir.join("truth.jsonl"), truth)?;
        fs::write(
            dir.join("world.toml"),
            toml::to_string_pretty(&self.spec).map_err(std::io::Error::other)?,
        )?;
        // Paths in the written config are relative to the world directory.
        let cfg = Self::config_for(base, Path::new(""));
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml())?;
        Ok(path)
    }
}

/// Union of worlds generated from one spec under different configs (for
/// example several k), so one script serves a whole sweep.
pub fn merge(worlds: &[ScriptedWorld]) -> Result<ScriptedWorld, SimError> {
    let Some(first) = worlds.first() else {
        return Err(SimError::Incompatible("no worlds given".into()));
    };
    let mut merged = first.clone();
    let mut seen: HashSet<String> = merged
        .script
        .entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("entry serializes"))
        .collect();
    for w in &worlds[1..] {
        if w.records != first.records || w.corpus != first.corpus {
            return Err(SimError::Incompatible(
                "worlds differ in questions or corpus".into(),
            ));
        }
        for e in &w.script.entries {
            if seen.insert(serde_json::to_string(e).expect("entry serializes")) {
                merged.script.entries.push(e.clone());
            }
        }
        for (mt, wt) in merged.truth.iter_mut().zip(&w.truth) {
            if wt.verdicts_cl.len() > mt.verdicts_cl.len() {
                mt.verdicts_cl = wt.verdicts_cl.clone();
                mt.verdicts_cm = wt.verdicts_cm.clone();
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_config(mode: Mode) -> PipelineConfig {
        let mut c = PipelineConfig {
            mode,
            parallelism: 1,
            cache_dir: None,
            ..Default::default()
        };
        c.answerer.model = "sim-answerer".into();
        c.verifier.model = "sim-verifier".into();
        c
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        for k in 1..8 {
            let s: f64 = binomial_pmf(k, 0.37).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(binomial_pmf(3, 1.0), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn perfect_world_needs_no_retrieval() {
        let spec = WorldSpec {
            n_questions: 12,
            coverage: 1.0,
            consistency_fidelity: 1.0,
            retrieval_noise: 0.0,
            ..Default::default()
        };
        let cfg = sim_config(Mode::Cl);
        let world = generate_world(&spec, &cfg).unwrap();
        let traces = world
            .engine(&cfg, None)
            .unwrap()
            .run_dataset(&world.records);
        for t in &traces {
            assert_eq!(t.decision(), Some(Decision::AcceptInitial));
            assert_eq!(crate::eval::is_correct(t), Some(true));
            assert_eq!(t.counters.retrieval_calls, 0);
        }
        let gate = Gate::from_config(&cfg);
        assert_eq!(expected_accuracy(&spec, &gate, 1.0), 1.0);
    }

    #[test]
    fn clueless_world_always_retrieves_and_recovers() {
        let spec = WorldSpec {
            n_questions: 12,
            coverage: 0.0,
            confusion_rate: 0.0,
            retrieval_noise: 0.0,
            ..Default::default()
        };
        let cfg = sim_config(Mode::Hybrid);
        let world = generate_world(&spec, &cfg).unwrap();
        let traces = world
            .engine(&cfg, None)
            .unwrap()
            .run_dataset(&world.records);
        for t in &traces {
            assert_eq!(t.decision(), Some(Decision::Retrieve));
            assert_eq!(crate::eval::is_correct(t), Some(true));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = WorldSpec {
            n_questions: 20,
            seed: 9,
            ..Default::default()
        };
        let cfg = sim_config(Mode::Hybrid);
        let a = generate_world(&spec, &cfg).unwrap();
        let b = generate_world(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&WorldSpec { seed: 10, ..spec }, &cfg).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn missing_entries_are_reported() {
        let spec = WorldSpec {
            n_questions: 3,
            ..Default::default()
        };
        let cfg = sim_config(Mode::Cl);
        let mut world = generate_world(&spec, &cfg).unwrap();
        world
            .script_mut()
            .entries
            .retain(|e| e.sample_index.is_none());
        match world.verify_closure(&cfg) {
            Err(SimError::ClosureViolation { ids, .. }) => assert_eq!(ids.len(), 3),
            other => panic!("expected closure violation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = WorldSpec {
            coverage: 1.5,
            ..Default::default()
        };
        assert!(generate_world(&spec, &sim_config(Mode::Cl)).is_err());
        let mut same = sim_config(Mode::Cl);
        same.verifier.model = same.answerer.model.clone();
        assert!(generate_world(&WorldSpec::default(), &same).is_err());
    }

    #[test]
    fn merged_worlds_serve_both_k() {
        let spec = WorldSpec {
            n_questions: 8,
            ..Default::default()
        };
        let mut c4 = sim_config(Mode::Cl);
        c4.k = 4;
        let c6 = sim_config(Mode::Cl);
        let w4 = generate_world(&spec, &c4).unwrap();
        let w6 = generate_world(&spec, &c6).unwrap();
        assert_eq!(w6.truth[0].verdicts_cl[..4], w4.truth[0].verdicts_cl[..]);
        let merged = merge(&[w4, w6]).unwrap();
        merged.verify_closure(&c4).unwrap();
        merged.verify_closure(&c6).unwrap();
        assert_eq!(merged.truth[0].verdicts_cl.len(), 6);
    }
}
