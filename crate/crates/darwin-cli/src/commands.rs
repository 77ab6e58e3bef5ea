//! Subcommand implementations. Each returns `Result<(), CliError>`; the
//! binary maps errors to exit codes (1 config, 2 unreachable, 3 aborted).

use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::RngCore;

use darwin::analysis::{self, Metric};
use darwin::backends::http::{
    health_check, HttpBackendConfig, HttpGenerationBackend, HttpMutationBackend,
    HttpRewardBackend, API_KEY_ENV, GENERATION_URL_ENV, REWARD_URL_ENV,
};
use darwin::backends::mock::MockFamily;
use darwin::backends::server::serve_mock;
use darwin::backends::RunBackends;
use darwin::rng::{derive_substream, labels};
use darwin::trace::{TraceHeader, TraceRecorder};
use darwin::{run_strategy, SearchConfig, SearchTrace, SeedInstruction, Strategy};

use crate::manifest::{RunManifest, RunStatus};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StrategyArg {
    Darwin,
    SampleBest,
    SampleReplace,
    MutateBest,
}

impl From<StrategyArg> for Strategy {
    fn from(arg: StrategyArg) -> Self {
        match arg {
            StrategyArg::Darwin => Strategy::Darwin,
            StrategyArg::SampleBest => Strategy::SampleBest,
            StrategyArg::SampleReplace => Strategy::SampleReplace,
            StrategyArg::MutateBest => Strategy::MutateBest,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Search strategy to execute.
    #[arg(value_enum)]
    pub strategy: StrategyArg,
    /// JSON config file; defaults apply for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A single prompt.
    #[arg(long, conflicts_with = "prompts")]
    pub prompt: Option<String>,
    /// A file with one prompt per line.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Mock backend family (count-a, biased-coin, prefix-monotone) instead
    /// of HTTP backends.
    #[arg(long)]
    pub mock: Option<String>,
    /// Output directory for traces, manifests, and answers.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Root rng seed; overrides the config file. Omitting both draws one
    /// from OS entropy and prints it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker pool size for multi-prompt runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

enum BackendChoice {
    Mock(MockFamily),
    Http {
        generation_url: String,
        reward_url: String,
    },
}

impl BackendChoice {
    fn describe(&self) -> String {
        match self {
            BackendChoice::Mock(family) => format!("mock:{}", family.name),
            BackendChoice::Http { generation_url, .. } => format!("http:{generation_url}"),
        }
    }

    fn build(&self, config: &SearchConfig) -> RunBackends {
        match self {
            BackendChoice::Mock(family) => RunBackends::new(
                family.generator.clone(),
                family.reward.clone(),
                family.mutator.clone(),
            ),
            BackendChoice::Http {
                generation_url,
                reward_url,
            } => {
                let mutation_seed = derive_substream(config.rng_seed, labels::MUTATION, &[]);
                RunBackends::new(
                    HttpGenerationBackend::new(HttpBackendConfig::new(generation_url)),
                    HttpRewardBackend::new(HttpBackendConfig::new(reward_url)),
                    HttpMutationBackend::new(
                        HttpBackendConfig::new(generation_url),
                        mutation_seed,
                    ),
                )
            }
        }
    }
}

fn resolve_backend(mock: Option<&str>) -> Result<BackendChoice, CliError> {
    if let Some(name) = mock {
        let family = MockFamily::by_name(name).ok_or_else(|| {
            CliError::config(format!(
                "unknown mock family {name:?}; available: {}",
                MockFamily::NAMES.join(", ")
            ))
        })?;
        return Ok(BackendChoice::Mock(family));
    }
    let generation_url = std::env::var(GENERATION_URL_ENV).ok();
    let reward_url = std::env::var(REWARD_URL_ENV).ok();
    match (generation_url, reward_url) {
        (Some(generation_url), Some(reward_url)) => Ok(BackendChoice::Http {
            generation_url,
            reward_url,
        }),
        _ => Err(CliError::config(format!(
            "no backend configured: pass --mock NAME or set {GENERATION_URL_ENV} and {REWARD_URL_ENV}"
        ))),
    }
}

fn preflight(choice: &BackendChoice) -> Result<(), CliError> {
    if let BackendChoice::Http {
        generation_url,
        reward_url,
    } = choice
    {
        for url in [generation_url, reward_url] {
            health_check(url).map_err(|e| CliError::Unreachable(format!("{url}: {e}")))?;
        }
    }
    Ok(())
}

/// Loads the config file (or defaults) and reports whether the file pinned
/// rng_seed explicitly, for seed precedence.
fn load_config(path: Option<&Path>) -> Result<(SearchConfig, bool), CliError> {
    match path {
        None => Ok((SearchConfig::default(), false)),
        Some(path) => {
            let raw = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&raw)
                .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
            let has_seed = value.get("rng_seed").is_some();
            let config = SearchConfig::from_json_str(&raw)?;
            Ok((config, has_seed))
        }
    }
}

fn collect_prompts(args: &RunArgs) -> Result<Vec<String>, CliError> {
    match (&args.prompt, &args.prompts) {
        (Some(prompt), None) => Ok(vec![prompt.clone()]),
        (None, Some(path)) => {
            let raw = std::fs::read_to_string(path)?;
            let prompts: Vec<String> = raw
                .lines()
                .map(str::trim)
                .filter(|line| !line.is_empty())
                .map(str::to_string)
                .collect();
            if prompts.is_empty() {
                return Err(CliError::config(format!(
                    "prompt file {} is empty",
                    path.display()
                )));
            }
            Ok(prompts)
        }
        _ => Err(CliError::config(
            "exactly one of --prompt or --prompts is required",
        )),
    }
}

struct RunSummary {
    prompt: String,
    final_reward: f64,
    trace_path: PathBuf,
    answer_path: PathBuf,
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let strategy: Strategy = args.strategy.into();
    let (mut config, file_has_seed) = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    } else if !file_has_seed {
        let seed = rand::rngs::OsRng.next_u64();
        println!("generated rng_seed {seed} (pass --seed {seed} to reproduce)");
        config.rng_seed = seed;
    }
    config.validate()?;

    let prompts = collect_prompts(args)?;
    let choice = resolve_backend(args.mock.as_deref())?;
    preflight(&choice)?;
    std::fs::create_dir_all(&args.out)?;

    let run_prompt =
        |prompt: &String| run_one(strategy, &config, prompt, &choice, &args.out);
    let results: Vec<Result<RunSummary, CliError>> = run_prompts(&prompts, args.jobs, run_prompt);

    let mut first_error = None;
    for result in results {
        match result {
            Ok(summary) => println!(
                "{}: final_reward={} answer={} trace={}",
                summary.prompt,
                summary.final_reward,
                summary.answer_path.display(),
                summary.trace_path.display()
            ),
            Err(e) => {
                eprintln!("error: {e}");
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match first_error {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

#[cfg(feature = "parallel")]
fn run_prompts<F>(prompts: &[String], jobs: Option<usize>, run: F) -> Vec<Result<RunSummary, CliError>>
where
    F: Fn(&String) -> Result<RunSummary, CliError> + Sync + Send,
{
    use rayon::prelude::*;
    let jobs = jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("worker pool");
    pool.install(|| prompts.par_iter().map(run).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_prompts<F>(prompts: &[String], _jobs: Option<usize>, run: F) -> Vec<Result<RunSummary, CliError>>
where
    F: Fn(&String) -> Result<RunSummary, CliError>,
{
    prompts.iter().map(run).collect()
}

fn run_one(
    strategy: Strategy,
    config: &SearchConfig,
    prompt: &str,
    choice: &BackendChoice,
    out_dir: &Path,
) -> Result<RunSummary, CliError> {
    let seed = SeedInstruction::new(prompt)
        .map_err(|e| CliError::config(format!("invalid prompt: {e}")))?;
    let backends = choice.build(config);
    let backend_desc = choice.describe();
    let header = TraceHeader::new(strategy, config, seed.instruction(), &backend_desc);
    let run_id = header.run_id.clone();

    let trace_file = format!("run-{run_id}.trace.jsonl");
    let trace_path = out_dir.join(&trace_file);
    let manifest_path = out_dir.join(format!("run-{run_id}.manifest.json"));
    let answer_file = format!("run-{run_id}.answer.txt");
    let answer_path = out_dir.join(&answer_file);

    let sink = File::create(&trace_path)?;
    let mut recorder = TraceRecorder::with_sink(header, Box::new(sink));
    let started_at = chrono::Utc::now().to_rfc3339();
    let outcome = run_strategy(strategy, &backends, &seed, config, &mut recorder);
    let finished_at = chrono::Utc::now().to_rfc3339();
    let trace_result = recorder.finish();

    let trace_sha256 = darwin::trace::trace_hash_hex(&std::fs::read(&trace_path)?);
    let mut manifest = RunManifest {
        run_id,
        strategy,
        prompt: prompt.to_string(),
        started_at,
        finished_at,
        config: config.clone(),
        backend: backend_desc,
        trace_file,
        trace_sha256,
        answer_file: None,
        status: RunStatus::Aborted,
    };

    match (outcome, trace_result) {
        (Ok(outcome), Ok(_)) => {
            std::fs::write(&answer_path, outcome.answer.text())?;
            manifest.answer_file = Some(answer_file);
            manifest.status = RunStatus::Complete;
            manifest.write(&manifest_path)?;
            Ok(RunSummary {
                prompt: prompt.to_string(),
                final_reward: outcome.final_reward,
                trace_path,
                answer_path,
            })
        }
        (Err(e), _) => {
            manifest.write(&manifest_path)?;
            Err(CliError::Aborted(format!(
                "{e} (partial trace at {})",
                trace_path.display()
            )))
        }
        (_, Err(e)) => {
            manifest.write(&manifest_path)?;
            Err(CliError::Aborted(format!(
                "trace sink failed: {e} ({})",
                trace_path.display()
            )))
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Glob of trace files to analyze (quote it).
    #[arg(long)]
    pub traces: String,
    /// Metrics to compute (jaccard, rbo, win-prob); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Top-k depth; defaults to the traced top_k.
    #[arg(long)]
    pub k: Option<usize>,
    /// RBO persistence; defaults to the traced rbo_persistence.
    #[arg(long)]
    pub p: Option<f64>,
    /// Smoothing window; defaults to the traced smoothing_window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Report output path (JSON).
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Also write one CSV per series into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = glob::glob(&args.traces)
        .map_err(|e| CliError::config(format!("bad glob {:?}: {e}", args.traces)))?
        .filter_map(Result::ok)
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::config(format!(
            "no traces matched {:?}",
            args.traces
        )));
    }
    let traces: Vec<SearchTrace> = paths
        .iter()
        .map(|path| {
            SearchTrace::read_file(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_, _>>()?;

    let metrics: Vec<Metric> = if args.metrics.is_empty() {
        Metric::ALL.to_vec()
    } else {
        args.metrics
            .iter()
            .map(|name| name.parse().map_err(CliError::Config))
            .collect::<Result<_, _>>()?
    };
    let reference = &traces[0].header.config;
    let k = args.k.unwrap_or(reference.top_k);
    let persistence = args.p.unwrap_or(reference.rbo_persistence);
    let window = args.window.unwrap_or(reference.smoothing_window);
    if !(persistence > 0.0 && persistence < 1.0) {
        return Err(CliError::config("p must lie strictly between 0 and 1"));
    }
    if window == 0 {
        return Err(CliError::config("window must be at least 1"));
    }

    let report = analysis::analyze_traces(&traces, &metrics, k, persistence, window)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::config(format!("report serialization: {e}")))?;
    json.push('\n');
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, json)?;

    if let Some(csv_dir) = &args.csv_dir {
        std::fs::create_dir_all(csv_dir)?;
        for series in &report.series {
            std::fs::write(csv_dir.join(format!("{}.csv", series.name)), series.to_csv())?;
        }
    }
    println!(
        "analyzed {} trace(s); report at {}",
        traces.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// JSON config file to validate.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mock backend family to instantiate instead of pinging HTTP backends.
    #[arg(long)]
    pub mock: Option<String>,
}

pub fn cmd_check(args: &CheckArgs) -> Result<(), CliError> {
    let (config, _) = load_config(args.config.as_deref())?;
    config.validate()?;
    println!(
        "resolved config:\n{}",
        serde_json::to_string_pretty(&config).expect("config serializes")
    );
    if args.mock.is_some() || std::env::var(GENERATION_URL_ENV).is_ok() {
        let choice = resolve_backend(args.mock.as_deref())?;
        preflight(&choice)?;
        println!("backend ok: {}", choice.describe());
    } else {
        println!("no backend configured (config check only)");
    }
    if std::env::var(API_KEY_ENV).is_ok() {
        println!("api key: set");
    }
    println!("config ok");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeMockArgs {
    /// Port to bind (0 picks a free one).
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// Mock family to serve.
    #[arg(long, default_value = "count-a")]
    pub mock: String,
}

pub fn cmd_serve_mock(args: &ServeMockArgs) -> Result<(), CliError> {
    let family = MockFamily::by_name(&args.mock).ok_or_else(|| {
        CliError::config(format!(
            "unknown mock family {:?}; available: {}",
            args.mock,
            MockFamily::NAMES.join(", ")
        ))
    })?;
    let handle = serve_mock(args.port, family)
        .map_err(|e| CliError::Unreachable(e.to_string()))?;
    println!("mock server listening on {}", handle.base_url());
    println!("  POST {}/v1/completions", handle.base_url());
    println!("  POST {}/v1/score", handle.base_url());
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}
