//! `promptloop` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid configuration, usage or input,
//! 3 backend unavailable, 4 run aborted mid-flight (log retained),
//! 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use promptloop_core::config::{validate_corpus_path, ConfigError};
use promptloop_core::demo::{run_demo, DemoScenario};
use promptloop_core::gateway::{BackendKind, GatewayError};
use promptloop_core::scoring::{corpus_score, load_corpus, ScoringError};
use promptloop_core::store::{
    self, build_report, emit_report, read_log, render_markdown, EventKind, LoadedLog, ReportFormat,
    StoreError,
};
use promptloop_core::{
    resume_optimization, run_optimization, CliConfig, EmbeddingCache, EngineContext, EngineError,
    Gateway, MockBackend, OptimizationResult,
};

const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "promptloop",
    version,
    about = "Data-free iterative prompt optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a task prompt, or resume an interrupted run.
    Optimize(OptimizeArgs),
    /// Score a text against the reference corpus.
    Score(ScoreArgs),
    /// Check a config file and print it with all defaults filled in.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Render the report of a run log.
    Report {
        log: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Run the bundled offline demo on the scripted mock backend.
    Demo {
        /// Write the demo's log, reports and corpus here.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// The task prompt.
    #[arg(long, conflicts_with = "prompt_file", required_unless_present_any = ["prompt_file", "resume"])]
    prompt: Option<String>,
    /// File holding the task prompt.
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Continue the run recorded in this log.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    text: String,
    /// Corpus file, overriding `corpus_path` from the config.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

fn gateway_code(e: &GatewayError) -> u8 {
    match e {
        GatewayError::Unavailable { .. } => 3,
        GatewayError::InvalidConfig(_) => 2,
        _ => 1,
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<ScoringError> for Failure {
    fn from(e: ScoringError) -> Self {
        let code = match &e {
            ScoringError::Gateway(g) => gateway_code(g),
            ScoringError::Shape { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Self {
            code: gateway_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::DigestMismatch { .. }
            | StoreError::AlreadyFinished
            | StoreError::Corrupt { .. }
            | StoreError::Empty => 2,
            StoreError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Gateway(g) => g.into(),
            EngineError::Scoring(s) => s.into(),
            EngineError::Store(s) => s.into(),
            EngineError::InvalidConfig(_) | EngineError::InvalidInput(_) => {
                Self::usage(e.to_string())
            }
            EngineError::RoundAborted { .. } => Self {
                code: 4,
                message: e.to_string(),
            },
            EngineError::Replay(_) => Self {
                code: 1,
                message: e.to_string(),
            },
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn init_logging(default_level: &str) {
    let env = env_logger::Env::default().default_filter_or(default_level);
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

fn load_config(path: &Path) -> Result<CliConfig, Failure> {
    let config = CliConfig::load(path)?;
    init_logging(config.log_level.as_str());
    Ok(config)
}

/// The configured backend. A mock is returned separately so a resumed run
/// can skip the replies its log already consumed.
fn build_gateway(config: &CliConfig) -> Result<(Gateway, Option<Arc<MockBackend>>), Failure> {
    if config.backend.kind == BackendKind::Mock {
        let mock = Arc::new(MockBackend::from_descriptor(&config.backend));
        return Ok((Gateway::new(mock.clone()), Some(mock)));
    }
    Ok((Gateway::from_descriptor(&config.backend)?, None))
}

fn write_reports(log_path: &Path, dir: &Path) -> Result<(), Failure> {
    let report = build_report(&read_log(log_path)?)?;
    let md = dir.join("report.md");
    fs::write(&md, render_markdown(&report)).map_err(|e| io_failure(&md, e))?;
    let json = dir.join("report.json");
    let text = emit_report(log_path, ReportFormat::Json)?;
    fs::write(&json, text).map_err(|e| io_failure(&json, e))?;
    Ok(())
}

fn print_result(result: &OptimizationResult) {
    println!("Best prompt ({}):", result.best.id);
    println!("{}", result.best.step_plan);
    if let Some(score) = result.best.score {
        println!("Score: {score:?}");
    }
}

fn optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let config = load_config(&args.config)?;
    config.validate()?;
    let prompt = match (&args.prompt, &args.prompt_file) {
        (Some(p), None) => Some(p.clone()),
        (None, Some(path)) => Some(
            fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?
                .trim()
                .to_string(),
        ),
        (None, None) => None,
        (Some(_), Some(_)) => return Err(Failure::usage("use either --prompt or --prompt-file")),
    };
    if matches!(&prompt, Some(p) if p.trim().is_empty()) {
        return Err(Failure::usage("task prompt is empty"));
    }

    let resumed = match &args.resume {
        Some(path) => Some(read_log(path)?),
        None => None,
    };
    let log_path = match (&args.resume, &resumed) {
        (Some(path), Some(logged)) => {
            if let Some(p) = &prompt {
                if Some(p.as_str()) != logged_task(logged) {
                    return Err(Failure::usage(format!(
                        "--prompt differs from the task prompt recorded in {}",
                        path.display()
                    )));
                }
            }
            path.clone()
        }
        _ => {
            let path = config.output_dir.join(LOG_FILE);
            if path.exists() {
                return Err(Failure::usage(format!(
                    "{} already exists; resume it with --resume or choose another output_dir",
                    path.display()
                )));
            }
            path
        }
    };

    let (gateway, mock) = build_gateway(&config)?;
    let health = gateway.health_check();
    if !health.is_ok() {
        return Err(Failure {
            code: 3,
            message: format!(
                "backend unavailable: {}",
                health.cause.unwrap_or_else(|| "health check failed".into())
            ),
        });
    }
    let cache = EmbeddingCache::new();
    let corpus = load_corpus(
        config.corpus_path()?,
        config.max_documents,
        &gateway,
        &cache,
    )?;
    let ctx = EngineContext {
        config: &config.engine,
        corpus: &corpus,
        gateway: &gateway,
        cache: &cache,
    };

    let outcome = match (&resumed, prompt) {
        (Some(logged), _) => {
            if let Some(mock) = &mock {
                for (role, n) in store::replies_consumed(logged.committed()) {
                    mock.fast_forward(role, n);
                }
            }
            resume_optimization(&ctx, &log_path)
        }
        (None, Some(prompt)) => {
            fs::create_dir_all(&config.output_dir)
                .map_err(|e| io_failure(&config.output_dir, e))?;
            run_optimization(&ctx, &prompt, Some(&log_path))
        }
        (None, None) => return Err(Failure::usage("a task prompt is required")),
    };
    let report_dir = config.output_dir.clone();
    match outcome {
        Ok(result) => {
            fs::create_dir_all(&report_dir).map_err(|e| io_failure(&report_dir, e))?;
            write_reports(&log_path, &report_dir)?;
            print_result(&result);
            println!("Log: {}", log_path.display());
            Ok(())
        }
        Err(e) => {
            if log_path.exists() {
                eprintln!("run log retained at {}", log_path.display());
            }
            Err(e.into())
        }
    }
}

fn logged_task(log: &LoadedLog) -> Option<&str> {
    log.events.iter().find_map(|e| match &e.kind {
        EventKind::RunStarted { task_prompt, .. } => Some(task_prompt.as_str()),
        _ => None,
    })
}

fn score(args: ScoreArgs) -> Result<(), Failure> {
    let config = load_config(&args.config)?;
    config
        .backend
        .validate()
        .map_err(|e| Failure::usage(format!("invalid `backend`: {e}")))?;
    let corpus_path = match &args.corpus {
        Some(p) => p.as_path(),
        None => config.corpus_path()?,
    };
    validate_corpus_path(corpus_path)?;
    if args.text.trim().is_empty() {
        return Err(Failure::usage("degenerate input: text is empty"));
    }
    let (gateway, _) = build_gateway(&config)?;
    let cache = EmbeddingCache::new();
    let corpus = load_corpus(corpus_path, config.max_documents, &gateway, &cache)?;
    let s = corpus_score(&args.text, &corpus, &cache, &gateway)?;
    println!("{:?}", s.value());
    Ok(())
}

fn validate_config(path: &Path) -> Result<(), Failure> {
    let config = load_config(path)?;
    config.validate()?;
    print!("{}", config.to_toml());
    Ok(())
}

fn report(log: &Path, format: ReportFormat) -> Result<(), Failure> {
    init_logging("warn");
    print!("{}", emit_report(log, format)?);
    Ok(())
}

fn demo(output_dir: Option<PathBuf>) -> Result<(), Failure> {
    init_logging("warn");
    let scenario = DemoScenario::default();
    let log_path = match &output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            let path = dir.join(LOG_FILE);
            if path.exists() {
                return Err(Failure::usage(format!("{} already exists", path.display())));
            }
            Some(path)
        }
        None => None,
    };
    let outcome = run_demo(&scenario, log_path.as_deref())?;
    println!("Task: {}", scenario.task_prompt);
    println!("Round  Mean score");
    for (i, s) in outcome.trajectory.iter().enumerate() {
        println!("{:>5}  {s:.6}", i + 1);
    }
    print_result(&outcome.result);
    if let (Some(dir), Some(log)) = (&output_dir, &log_path) {
        let corpus = dir.join("corpus.jsonl");
        fs::write(&corpus, scenario.corpus_jsonl()).map_err(|e| io_failure(&corpus, e))?;
        write_reports(log, dir)?;
        println!("Log: {}", log.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(args) => optimize(args),
        Command::Score(args) => score(args),
        Command::ValidateConfig { config } => validate_config(&config),
        Command::Report { log, format } => report(&log, format),
        Command::Demo { output_dir } => demo(output_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
