use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gaterag::eval::{
    export_score_labels, render_attribution, render_call_table, render_metric_table,
    render_sweep_table, sweep, sweep_csv, AttributionCounts, MetricReport, SweepAxis,
};
use gaterag::pipeline::{
    load_dataset, sample_records, AnswerTrace, BackendSpec, DatasetRecord, Engine, Gold, Mode,
    PipelineConfig, PipelineError, RetrieverSpec, RunStore,
};
use gaterag::providers::{CacheKey, HttpBackendConfig, ProviderError, ResponseCache};
use gaterag::retrieval::WebSearchConfig;
use gaterag::simlab::{generate_world, SimError, WorldSpec};

const EXIT_CONFIG: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_config() {
            EXIT_CONFIG
        } else {
            EXIT_PROVIDER
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Pipeline(p) => p.into(),
            SimError::InvalidSpec(_) | SimError::Incompatible(_) => Failure::config(e.to_string()),
            other => Self {
                code: EXIT_PROVIDER,
                message: other.to_string(),
            },
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_PROVIDER,
            message: format!("i/o error: {e}"),
        }
    }
}

impl From<ProviderError> for Failure {
    fn from(e: ProviderError) -> Self {
        PipelineError::from(e).into()
    }
}

#[derive(Parser)]
#[command(
    name = "gaterag",
    version,
    about = "Consistency-gated retrieval-augmented question answering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and print the decision path.
    Ask {
        question: String,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Run a JSONL dataset and score it.
    Run {
        dataset: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// Run a dataset once per value of one tunable.
    Sweep {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values, e.g. 0.2,0.4,0.6 or en-zh,en-fr.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        opts: ConfigArgs,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// Generate a simulated world (dataset, script, corpus, config).
    Simgen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// World spec file (TOML); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        questions: Option<usize>,
        #[arg(long)]
        coverage: Option<f64>,
        #[arg(long)]
        fidelity: Option<f64>,
        #[arg(long)]
        confusion: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        world_seed: Option<u64>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Summarise one or more run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Inspect the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
        #[arg(long, global = true)]
        cache_dir: Option<PathBuf>,
        #[arg(long, global = true)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Entry count and size.
    Stats,
    /// Print one entry by key.
    Show { key: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Threshold,
    K,
    Alpha,
    LanguagePair,
    Verifier,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Threshold => SweepAxis::Threshold,
            AxisArg::K => SweepAxis::K,
            AxisArg::Alpha => SweepAxis::Alpha,
            AxisArg::LanguagePair => SweepAxis::LanguagePair,
            AxisArg::Verifier => SweepAxis::Verifier,
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Evaluate a seeded random sample of this many records.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Flags shared by every command that builds a pipeline. Each overrides
/// the matching config-file value.
#[derive(Args, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Threshold for the selected mode.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    source_lang: Option<String>,
    #[arg(long)]
    target_lang: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Output directory for traces.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Answerer backend: script:PATH or http:URL.
    #[arg(long)]
    provider: Option<String>,
    /// Verifier backend: script:PATH or http:URL.
    #[arg(long)]
    verifier: Option<String>,
    /// Answerer model id.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    verifier_model: Option<String>,
    /// Retriever: corpus:DIR, web:URL or none.
    #[arg(long)]
    retriever: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
}

fn parse_backend(value: &str, key_env: &str) -> Result<BackendSpec, Failure> {
    match value.split_once(':') {
        Some(("script", path)) => Ok(BackendSpec::Scripted {
            script: path.into(),
        }),
        Some(("http", url)) => Ok(BackendSpec::Http(HttpBackendConfig {
            endpoint: url.to_string(),
            api_key_env: Some(key_env.into()),
            ..HttpBackendConfig::default()
        })),
        _ => Err(Failure::config(format!(
            "backend {value:?} must be script:PATH or http:URL"
        ))),
    }
}

fn parse_retriever(value: &str) -> Result<RetrieverSpec, Failure> {
    match value.split_once(':') {
        Some(("corpus", dir)) => Ok(RetrieverSpec::Corpus { dir: dir.into() }),
        Some(("web", url)) => Ok(RetrieverSpec::Web(WebSearchConfig {
            endpoint: url.to_string(),
            ..WebSearchConfig::default()
        })),
        None if value == "none" => Ok(RetrieverSpec::Disabled),
        _ => Err(Failure::config(format!(
            "retriever {value:?} must be corpus:DIR, web:URL or none"
        ))),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(t) = self.threshold {
            if cfg.thresholds.for_mode(cfg.mode).is_none() {
                return Err(Failure::config(format!(
                    "--threshold has no effect in mode {}",
                    cfg.mode
                )));
            }
            cfg.thresholds.set_for_mode(cfg.mode, t);
        }
        if let Some(s) = &self.source_lang {
            cfg.languages.source = s.clone();
        }
        if let Some(t) = &self.target_lang {
            cfg.languages.target = t.clone();
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let Some(p) = &self.provider {
            cfg.answerer.backend = parse_backend(p, "GATERAG_CHAT_API_KEY")?;
        }
        if let Some(v) = &self.verifier {
            cfg.verifier.backend = parse_backend(v, "GATERAG_VERIFIER_API_KEY")?;
        }
        if let Some(m) = &self.model {
            cfg.answerer.model = m.clone();
        }
        if let Some(m) = &self.verifier_model {
            cfg.verifier.model = m.clone();
        }
        if let Some(r) = &self.retriever {
            cfg.retriever = parse_retriever(r)?;
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if self.no_cache {
            cfg.cache_dir = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn store(&self, cfg: &PipelineConfig, label: &str) -> RunStore {
        match &self.run_dir {
            Some(d) => RunStore::at(d),
            None => RunStore::for_config(cfg),
        }
        .with_label(label)
    }
}

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn load_records(path: &Path, sampling: &SampleArgs) -> Result<Vec<DatasetRecord>, Failure> {
    let records = load_dataset(path)?;
    Ok(match sampling.sample {
        Some(n) => sample_records(&records, n, sampling.seed),
        None => records,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn print_trace_summary(trace: &AnswerTrace) {
    println!("question:       {}", trace.record.question);
    println!(
        "initial answer: {}",
        trace.initial_answer.as_deref().unwrap_or("-")
    );
    if let Some(c) = &trace.consistency {
        println!(
            "scores:         z_cl={} z_cm={} z_hybrid={} (threshold {})",
            fmt_opt(c.z_cl),
            fmt_opt(c.z_cm),
            fmt_opt(c.z_hybrid),
            fmt_opt(c.threshold)
        );
        let decision = serde_json::to_value(c.decision).expect("decision serializes");
        println!("decision:       {}", decision.as_str().unwrap_or_default());
    }
    if let Some(e) = &trace.evidence {
        println!("evidence:       {} snippet(s)", e.snippets.len());
    }
    println!(
        "final answer:   {}",
        trace.final_answer.as_deref().unwrap_or("-")
    );
    println!(
        "calls:          llm={} retrieval={}",
        trace.counters.llm_calls, trace.counters.retrieval_calls
    );
    if !trace.flags.is_empty() {
        println!("flags:          {}", trace.flags.join(", "));
    }
    if let Some(e) = &trace.error {
        println!("error:          {e}");
    }
}

fn outcome_code(traces: &[AnswerTrace]) -> Result<(), Failure> {
    let failed = traces.iter().filter(|t| t.is_error()).count();
    if failed == 0 {
        return Ok(());
    }
    let first = traces
        .iter()
        .find_map(|t| t.error.clone())
        .unwrap_or_default();
    let code = if failed == traces.len() {
        EXIT_PROVIDER
    } else {
        EXIT_PARTIAL
    };
    Err(Failure {
        code,
        message: format!(
            "{failed} of {} question(s) failed; first: {first}",
            traces.len()
        ),
    })
}

fn ask(question: &str, opts: &ConfigArgs) -> Result<(), Failure> {
    let cfg = opts.resolve()?;
    let engine = Engine::from_config(&cfg)?;
    let id = format!("ask-{}", &sha_hex(question)[..10]);
    let record = DatasetRecord {
        id,
        question: question.to_string(),
        gold: Gold::Answers(Vec::new()),
        category: None,
    };
    let trace = engine.run_question(&record);
    let store = match &opts.run_dir {
        Some(d) => RunStore::at(d),
        None => RunStore::at(cfg.runs_dir.join("ask").join(cfg.digest())),
    };
    store.create()?;
    store.write_trace(&trace)?;
    print_trace_summary(&trace);
    println!("trace:          {}", store.trace_path(trace.id()).display());
    outcome_code(std::slice::from_ref(&trace))
}

fn sha_hex(s: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn run(dataset: &Path, opts: &ConfigArgs, sampling: &SampleArgs) -> Result<(), Failure> {
    let cfg = opts.resolve()?;
    let records = load_records(dataset, sampling)?;
    let engine = Engine::from_config(&cfg)?;
    let store = opts.store(&cfg, &dataset_label(dataset));
    let traces = engine.run_dataset_into(&records, &store)?;
    let report = MetricReport::of(&traces);
    std::fs::write(
        store.dir().join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    std::fs::write(store.dir().join("scores.csv"), export_score_labels(&traces))?;
    print!("{}", render_metric_table(&[(cfg.mode.to_string(), report)]));
    println!();
    print!("{}", render_attribution(&AttributionCounts::of(&traces)));
    println!("run directory: {}", store.dir().display());
    outcome_code(&traces)
}

fn run_sweep(
    dataset: &Path,
    axis: SweepAxis,
    values: &[String],
    opts: &ConfigArgs,
    sampling: &SampleArgs,
) -> Result<(), Failure> {
    let cfg = opts.resolve()?;
    let records = load_records(dataset, sampling)?;
    let rows = sweep(&records, &cfg, axis, values, Engine::from_config, true);
    print!("{}", render_sweep_table(&rows));
    std::fs::create_dir_all(&cfg.runs_dir)?;
    let out = cfg.runs_dir.join(format!(
        "sweep-{}-{}-{}.csv",
        dataset_label(dataset),
        axis,
        cfg.digest()
    ));
    std::fs::write(&out, sweep_csv(&rows))?;
    println!("sweep table: {}", out.display());
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    match failed {
        0 => Ok(()),
        n => Err(Failure {
            code: if n == rows.len() {
                EXIT_PROVIDER
            } else {
                EXIT_PARTIAL
            },
            message: format!("{n} of {} sweep value(s) failed", rows.len()),
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn simgen(
    out: &Path,
    spec_path: Option<&Path>,
    overrides: [Option<f64>; 4],
    questions: Option<usize>,
    world_seed: Option<u64>,
    opts: &ConfigArgs,
) -> Result<(), Failure> {
    let mut spec = match spec_path {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            toml::from_str::<WorldSpec>(&raw)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => WorldSpec::default(),
    };
    let [coverage, fidelity, confusion, noise] = overrides;
    if let Some(v) = coverage {
        spec.coverage = v;
    }
    if let Some(v) = fidelity {
        spec.consistency_fidelity = v;
    }
    if let Some(v) = confusion {
        spec.confusion_rate = v;
    }
    if let Some(v) = noise {
        spec.retrieval_noise = v;
    }
    if let Some(n) = questions {
        spec.n_questions = n;
    }
    if let Some(s) = world_seed {
        spec.seed = s;
    }
    let cfg = opts.resolve()?;
    let world = generate_world(&spec, &cfg)?;
    let config_path = world.write(out, &cfg)?;
    println!(
        "wrote {} questions, {} script entries to {}",
        world.records.len(),
        world.script().entries.len(),
        out.display()
    );
    println!(
        "run it with: gaterag run {} --config {}",
        out.join("dataset.jsonl").display(),
        config_path.display()
    );
    Ok(())
}

fn report(run_dirs: &[PathBuf]) -> Result<(), Failure> {
    let mut metric_rows = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut call_rows: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let mut missing_total = 0;
    for dir in run_dirs {
        let store = RunStore::at(dir);
        let manifest = store.load_manifest()?;
        let (traces, missing) = store.load_traces()?;
        if !missing.is_empty() {
            eprintln!("{}: missing traces: {}", dir.display(), missing.join(", "));
            missing_total += missing.len();
        }
        let dataset = manifest.dataset.clone().unwrap_or_else(|| "dataset".into());
        let method = manifest.config.mode.to_string();
        let report = MetricReport::of(&traces);
        println!("== {} ({dataset}, {method})", dir.display());
        print!("{}", render_attribution(&AttributionCounts::of(&traces)));
        println!();
        metric_rows.push((format!("{method}/{dataset}"), report));
        if !datasets.contains(&dataset) {
            datasets.push(dataset.clone());
        }
        match call_rows.iter_mut().find(|(m, _)| *m == method) {
            Some((_, cells)) => cells.push((dataset, report.avg_retrieval_calls)),
            None => call_rows.push((method, vec![(dataset, report.avg_retrieval_calls)])),
        }
    }
    print!("{}", render_metric_table(&metric_rows));
    println!();
    println!("Average retrieval calls per question");
    let table: Vec<(String, Vec<Option<f64>>)> = call_rows
        .into_iter()
        .map(|(m, cells)| {
            let values = datasets
                .iter()
                .map(|d| cells.iter().find(|(cd, _)| cd == d).map(|(_, v)| *v))
                .collect();
            (m, values)
        })
        .collect();
    print!("{}", render_call_table(&datasets, &table));
    if missing_total > 0 {
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{missing_total} trace(s) missing"),
        });
    }
    Ok(())
}

fn cache(
    action: &CacheAction,
    cache_dir: Option<&Path>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    let dir = match (cache_dir, config) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(c)) => PipelineConfig::load(c)?
            .cache_dir
            .ok_or_else(|| Failure::config("config has caching disabled"))?,
        (None, None) => PipelineConfig::default()
            .cache_dir
            .expect("default config caches"),
    };
    let cache = ResponseCache::open(&dir)?;
    match action {
        CacheAction::Stats => {
            let s = cache.stats()?;
            println!("directory: {}", dir.display());
            println!("entries:   {}", s.entries);
            println!("bytes:     {}", s.bytes);
        }
        CacheAction::Show { key } => match cache.get(&CacheKey::from_hex(key.clone()))? {
            Some(e) => println!(
                "{}",
                serde_json::to_string_pretty(&e).expect("entry serializes")
            ),
            None => {
                return Err(Failure::config(format!("no cache entry {key}")));
            }
        },
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ask { question, opts } => ask(&question, &opts),
        Command::Run {
            dataset,
            opts,
            sampling,
        } => run(&dataset, &opts, &sampling),
        Command::Sweep {
            dataset,
            axis,
            values,
            opts,
            sampling,
        } => run_sweep(&dataset, axis.into(), &values, &opts, &sampling),
        Command::Simgen {
            out,
            spec,
            questions,
            coverage,
            fidelity,
            confusion,
            noise,
            world_seed,
            opts,
        } => simgen(
            &out,
            spec.as_deref(),
            [coverage, fidelity, confusion, noise],
            questions,
            world_seed,
            &opts,
        ),
        Command::Report { run_dirs } => report(&run_dirs),
        Command::Cache {
            action,
            cache_dir,
            config,
        } => cache(&action, cache_dir.as_deref(), config.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
