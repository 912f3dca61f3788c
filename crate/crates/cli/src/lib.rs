//! `sindy`: discovery runs, benchmark sweeps, retrieval-store tooling,
//! summarization utilities and the HTTP API over stored runs.

/// `println!` that reports a failed write instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout().lock(), $($t)*)?
    }};
}

pub mod bench;
mod commands;
pub mod config;
pub mod serve;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sindy_agent::llm::TransportSettings;
use sindy_agent::orchestrator::RunConfig;

use crate::config::FileConfig;

pub const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "sindy", version, about = "LLM-guided sparse identification of nonlinear dynamics")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the reflection loop on one system or on CSV trajectories.
    Discover(DiscoverArgs),
    /// Continue an interrupted discovery run.
    Resume(ResumeArgs),
    /// Sweep registry systems and ablations and write a report.
    Bench(BenchArgs),
    /// Build and inspect retrieval example stores.
    #[command(subcommand)]
    Rag(RagCommand),
    /// Summarize a trajectory as text and/or as a plot.
    Summarize(SummarizeArgs),
    /// Serve stored runs over HTTP.
    Serve(ServeArgs),
    /// Write a registry system's trajectory as CSV.
    Simulate(SimulateArgs),
    /// List the registry systems.
    Systems,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TransportArgs {
    /// Transport name: `live` or `scripted` (default: scripted when a fixture is given).
    #[arg(long)]
    pub transport: Option<String>,
    /// Fixture file or directory for the scripted transport.
    #[arg(long, value_name = "PATH")]
    pub fixture: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible endpoint, e.g. http://localhost:8000/v1.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Chat model id.
    #[arg(long)]
    pub model: Option<String>,
    /// Embedding model id.
    #[arg(long)]
    pub embedding_model: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
    /// Cap on in-flight requests.
    #[arg(long)]
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Observation parts in the prompt: none, text, data, image, all, or a `+` list.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Samples per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Iteration cap.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Stop once the best test R2 exceeds this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of best previous attempts shown in the prompt.
    #[arg(long)]
    pub attempts_in_prompt: Option<usize>,
    /// Retrieval store (JSON).
    #[arg(long, value_name = "FILE")]
    pub rag_store: Option<PathBuf>,
    /// Retrieved examples per prompt; 0 disables retrieval.
    #[arg(long)]
    pub rag_n: Option<usize>,
    /// Pin the optimizer to STLSQ(0.1) and let the model choose only the library.
    #[arg(long)]
    pub fixed_optimizer: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seconds to wait between iterations for human feedback.
    #[arg(long, value_name = "SECS")]
    pub await_feedback: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Registry system id (see `sindy systems`).
    #[arg(long, conflicts_with_all = ["train", "test"], required_unless_present = "train")]
    pub system: Option<String>,
    /// Training trajectory CSV with header t,x0,...; repeatable.
    #[arg(long, value_name = "CSV", requires = "test")]
    pub train: Vec<PathBuf>,
    /// Test trajectory CSV; repeatable.
    #[arg(long, value_name = "CSV", requires = "train")]
    pub test: Vec<PathBuf>,
    /// Free-text description of the system.
    #[arg(long, conflicts_with = "text_file")]
    pub text: Option<String>,
    /// File holding the free-text description.
    #[arg(long, value_name = "FILE")]
    pub text_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub transport: TransportArgs,
    /// Prefix of correlation ids (default: the system id).
    #[arg(long)]
    pub label: Option<String>,
    /// Exact run directory instead of `<runs-dir>/<timestamp>-seed<seed>`.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Keep the system's own example in retrieval results.
    #[arg(long)]
    pub rag_include_self: bool,
    /// Save every model reply as `recording.json` in the run directory.
    #[arg(long)]
    pub record: bool,
    /// Print the run summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ResumeArgs {
    /// Run directory to continue.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,
    #[command(flatten)]
    pub transport: TransportArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated system ids, `all`, or empty for none.
    #[arg(long, default_value = "all")]
    pub systems: String,
    /// Comma-separated ablations, e.g. `none,text,data,image`.
    #[arg(long, default_value = "none")]
    pub ablations: String,
    /// Parallel runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Exact output directory instead of `<runs-dir>/<timestamp>-seed<seed>`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub transport: TransportArgs,
}

#[derive(Debug, Subcommand)]
pub enum RagCommand {
    /// Embed seed examples into a new store.
    Build {
        /// Output store path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Seed examples TOML (default: the built-in set).
        #[arg(long, value_name = "FILE")]
        seed_file: Option<PathBuf>,
        #[command(flatten)]
        transport: TransportArgs,
    },
    /// Embed and append one example.
    Add {
        #[arg(long, value_name = "FILE")]
        store: PathBuf,
        #[arg(long)]
        description: String,
        /// Candidate TOML file.
        #[arg(long, value_name = "FILE")]
        config_file: PathBuf,
        #[arg(long)]
        system: Option<String>,
        #[command(flatten)]
        transport: TransportArgs,
    },
    /// Show a store and optionally query it.
    Inspect {
        #[arg(long, value_name = "FILE")]
        store: PathBuf,
        #[arg(long)]
        query: Option<String>,
        #[arg(short, long, default_value_t = 5)]
        n: usize,
        #[command(flatten)]
        transport: TransportArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Summarize the CSV slice (default when neither flag is given: both).
    #[arg(long)]
    pub data_summary: bool,
    /// Summarize the rendered plot.
    #[arg(long)]
    pub image_summary: bool,
    /// Also write the rendered plot to this PNG file.
    #[arg(long, value_name = "FILE")]
    pub plot_out: Option<PathBuf>,
    /// Print the prompts without calling a model.
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub transport: TransportArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: String,
    /// `train` or `test`.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Trajectory index within the split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Output CSV (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Fully merged run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub transport: TransportSettings,
    pub runs_dir: PathBuf,
    pub rag_store: Option<PathBuf>,
}

pub fn transport_settings(file: &FileConfig, t: &TransportArgs) -> TransportSettings {
    let f = &file.transport;
    let fixture = t.fixture.clone().or_else(|| f.fixture.clone());
    let kind = t
        .transport
        .clone()
        .or_else(|| f.kind.clone())
        .unwrap_or_else(|| if fixture.is_some() { "scripted" } else { "live" }.into());
    TransportSettings {
        kind,
        base_url: t.base_url.clone().or_else(|| f.base_url.clone()),
        model: t.model.clone().or_else(|| f.model.clone()),
        embedding_model: t.embedding_model.clone().or_else(|| f.embedding_model.clone()),
        timeout_secs: t.timeout.or(f.timeout_secs),
        max_concurrency: t.max_concurrency.or(f.max_concurrency),
        fixture,
    }
}

/// Merges flags over the config file over built-in defaults.
pub fn resolve(file: &FileConfig, r: &RunArgs, t: &TransportArgs) -> anyhow::Result<Settings> {
    let f = &file.run;
    let mut run = RunConfig::default();
    if let Some(a) = r.ablation.as_ref().or(f.ablation.as_ref()) {
        run.ablation = a.parse().map_err(anyhow::Error::msg)?;
    }
    run.samples_per_iteration = r.samples.or(f.samples).unwrap_or(run.samples_per_iteration);
    run.max_iterations = r.iterations.or(f.iterations).unwrap_or(run.max_iterations);
    run.success_threshold = r.threshold.or(f.threshold).unwrap_or(run.success_threshold);
    run.attempts_in_prompt = r.attempts_in_prompt.or(f.attempts_in_prompt).unwrap_or(run.attempts_in_prompt);
    run.rag_n = r.rag_n.or(f.rag_n).unwrap_or(run.rag_n);
    run.choose_optimizer = if r.fixed_optimizer { false } else { f.choose_optimizer.unwrap_or(true) };
    run.seed = r.seed.or(f.seed).unwrap_or(run.seed);
    run.feedback_wait_secs = r.await_feedback.or(f.feedback_wait_secs).unwrap_or(0);
    run.validate()?;
    Ok(Settings {
        run,
        transport: transport_settings(file, t),
        runs_dir: r
            .runs_dir
            .clone()
            .or_else(|| file.paths.runs_dir.clone())
            .unwrap_or_else(|| DEFAULT_RUNS_DIR.into()),
        rag_store: r.rag_store.clone().or_else(|| file.paths.rag_store.clone()),
    })
}

fn error_json(e: &anyhow::Error) -> String {
    let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
    serde_json::json!({ "error": e.to_string(), "causes": causes }).to_string()
}

/// A closed stdout (e.g. piping into `head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Discover(a) => commands::discover(&file, a),
        Command::Resume(a) => commands::resume(&file, a),
        Command::Bench(a) => bench::command(&file, a),
        Command::Rag(c) => commands::rag(&file, c),
        Command::Summarize(a) => commands::summarize(&file, a),
        Command::Serve(a) => serve::command(&file, a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Systems => commands::systems(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = FileConfig::parse("[run]\nsamples = 3\nseed = 9\n[transport]\nfixture = \"f\"\n").unwrap();
        let r = RunArgs { samples: Some(5), ..RunArgs::default() };
        let s = resolve(&file, &r, &TransportArgs::default()).unwrap();
        assert_eq!(s.run.samples_per_iteration, 5);
        assert_eq!(s.run.seed, 9);
        assert_eq!(s.transport.kind, "scripted");
        assert_eq!(s.runs_dir, PathBuf::from("runs"));
        let t = TransportArgs { transport: Some("live".into()), ..TransportArgs::default() };
        assert_eq!(resolve(&file, &r, &t).unwrap().transport.kind, "live");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let r = RunArgs { threshold: Some(2.0), ..RunArgs::default() };
        assert!(resolve(&FileConfig::default(), &r, &TransportArgs::default()).is_err());
        let r = RunArgs { ablation: Some("smell".into()), ..RunArgs::default() };
        assert!(resolve(&FileConfig::default(), &r, &TransportArgs::default()).is_err());
    }
}
