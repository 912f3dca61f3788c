use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use sindy_agent::llm::{Transport, TransportRegistry, TransportSettings};
use sindy_agent::orchestrator::{
    self, percentage_improvement, RunConfig, RunContext, RunDir, RunError, RunManifest, Transports,
};
use sindy_agent::rag::{parse_seed, ExampleStore, SEED_EXAMPLES};
use sindy_agent::summarize::{self, render_plot, PlotConfig, SystemObservation, DEFAULT_MAX_ROWS};
use sindy_agent::llm::RecordingTransport;
use sindy_core::dynamics::{finite_difference, find_system, read_csv, registry, write_csv};
use sindy_core::specdsl::parse_candidate;
use sindy_core::{Dataset, Trajectory};

use crate::config::FileConfig;
use crate::{resolve, transport_settings, DataArgs, DiscoverArgs, RagCommand, ResumeArgs, SimulateArgs, SummarizeArgs};

pub const RECORDING_FILE: &str = "recording.json";

/// Where a run's data came from; stored in the run config so `resume`
/// can rebuild the dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    System(String),
    Csv { train: Vec<PathBuf>, test: Vec<PathBuf> },
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::System(id) => write!(f, "system:{id}"),
            DataSource::Csv { train, test } => {
                let parts: Vec<String> = train
                    .iter()
                    .map(|p| format!("train={}", p.display()))
                    .chain(test.iter().map(|p| format!("test={}", p.display())))
                    .collect();
                write!(f, "csv:{}", parts.join(";"))
            }
        }
    }
}

impl FromStr for DataSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix("system:") {
            return Ok(DataSource::System(id.into()));
        }
        let Some(rest) = s.strip_prefix("csv:") else {
            bail!("unknown data source {s:?}");
        };
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for part in rest.split(';') {
            match part.split_once('=') {
                Some(("train", p)) => train.push(PathBuf::from(p)),
                Some(("test", p)) => test.push(PathBuf::from(p)),
                _ => bail!("malformed data source part {part:?}"),
            }
        }
        Ok(DataSource::Csv { train, test })
    }
}

impl DataSource {
    pub fn from_args(a: &DataArgs) -> Result<Self> {
        match (&a.system, a.train.is_empty()) {
            (Some(id), _) => Ok(DataSource::System(id.clone())),
            (None, false) => Ok(DataSource::Csv {
                train: a.train.clone(),
                test: a.test.clone(),
            }),
            (None, true) => bail!("give --system ID or --train/--test CSV files"),
        }
    }

    /// The dataset and the system's built-in description, if any.
    pub fn load(&self) -> Result<(Dataset, Option<String>)> {
        match self {
            DataSource::System(id) => {
                let sys = find_system(id).ok_or_else(|| anyhow!("unknown system {id:?}; see `sindy systems`"))?;
                Ok((sys.default_dataset()?, Some(sys.description.clone())))
            }
            DataSource::Csv { train, test } => {
                let id = train[0]
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "external".into());
                let train = train.iter().map(|p| load_trajectory(p)).collect::<Result<Vec<_>>>()?;
                let test = test.iter().map(|p| load_trajectory(p)).collect::<Result<Vec<_>>>()?;
                Ok((Dataset::new(id, train, test)?, None))
            }
        }
    }

    pub fn system_id(&self) -> Option<&str> {
        match self {
            DataSource::System(id) => Some(id),
            DataSource::Csv { .. } => None,
        }
    }
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let traj = read_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(finite_difference(&traj)?)
}

fn text_arg(a: &DataArgs) -> Result<Option<String>> {
    if let Some(t) = &a.text {
        return Ok(Some(t.clone()));
    }
    match &a.text_file {
        Some(p) => Ok(Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)),
        None => Ok(None),
    }
}

/// Builds one transport for all roles, wrapped in a recorder if asked.
pub fn build_transports(settings: &TransportSettings, record: bool) -> Result<(Transports, Option<Arc<RecordingTransport>>)> {
    let inner = TransportRegistry::builtin().build(settings)?;
    if record {
        let rec = Arc::new(RecordingTransport::new(inner));
        let t: Arc<dyn Transport> = rec.clone();
        Ok((Transports::single(t), Some(rec)))
    } else {
        Ok((Transports::single(inner), None))
    }
}

/// First free `<parent>/<timestamp>-seed<seed>[-n]`.
pub fn fresh_run_path(parent: &Path, seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-seed{seed}");
    let mut path = parent.join(&base);
    let mut n = 1;
    while path.exists() {
        n += 1;
        path = parent.join(format!("{base}-{n}"));
    }
    path
}

fn load_store(path: Option<&Path>, rag_n: usize, embedder: &dyn Transport) -> Result<Option<ExampleStore>> {
    if rag_n == 0 {
        return Ok(None);
    }
    let path = path.ok_or_else(|| anyhow!("retrieval needs --rag-store (or set rag_n = 0)"))?;
    let store = ExampleStore::load(path).with_context(|| format!("loading {}", path.display()))?;
    store.check_embedder(embedder)?;
    Ok(Some(store))
}

fn report(dir: &RunDir, manifest: &RunManifest, json: bool) -> Result<()> {
    if json {
        let summary = dir.summary().ok_or_else(|| anyhow!("run wrote no summary"))?;
        let mut v = serde_json::to_value(summary)?;
        v["run_dir"] = dir.path().display().to_string().into();
        out!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    out!("run directory: {}", dir.path().display());
    out!("iterations: {}", manifest.iterations.len());
    if let Some(f) = &manifest.finish {
        out!("finished: {:?}", f.reason);
    }
    if let Some(b) = manifest.best_so_far() {
        out!(
            "best: iteration {} sample {}, train R2 = {}, test R2 = {}, active terms = {}",
            b.iteration, b.sample, b.score.r2_train, b.score.r2_test, b.score.active_terms
        );
        if let Some(a) = manifest.attempt(b) {
            for e in &a.equations {
                out!("  {e}");
            }
        }
    }
    if let Some(pi) = percentage_improvement(manifest) {
        out!("improvement over iteration 1: {pi:.4}%");
    }
    Ok(())
}

fn run_outcome(dir: &RunDir, result: Result<RunManifest, RunError>, json: bool) -> Result<()> {
    match result {
        Ok(m) => report(dir, &m, json),
        Err(e) => Err(anyhow::Error::new(e).context(format!(
            "run stopped; continue with `sindy resume --run {}`",
            dir.path().display()
        ))),
    }
}

pub fn discover(file: &FileConfig, a: &DiscoverArgs) -> Result<()> {
    let settings = resolve(file, &a.run, &a.transport)?;
    let source = DataSource::from_args(&a.data)?;
    let (dataset, builtin_text) = source.load()?;
    let text = text_arg(&a.data)?.or(builtin_text);

    let mut config: RunConfig = settings.run.clone();
    config.label = a.label.clone().unwrap_or_else(|| dataset.system_id.clone());
    config.data_source = Some(source.to_string());
    config.rag_exclude = if a.rag_include_self { None } else { source.system_id().map(String::from) };
    config.validate()?;

    let (transports, recorder) = build_transports(&settings.transport, a.record)?;
    let store = load_store(settings.rag_store.as_deref(), config.rag_n, transports.embedding.as_ref())?;
    let root = match &a.run_dir {
        Some(p) => p.clone(),
        None => fresh_run_path(&settings.runs_dir, config.seed),
    };
    let dir = RunDir::create(&root).with_context(|| format!("creating {}", root.display()))?;
    let ctx = RunContext {
        transports: &transports,
        store: store.as_ref(),
        feedback: &dir,
        dir: Some(&dir),
    };
    let mut obs = SystemObservation::new(dataset, text);
    let result = orchestrator::reflect(&config, &mut obs, &ctx);
    if let Some(rec) = recorder {
        rec.save(&dir.path().join(RECORDING_FILE))?;
    }
    run_outcome(&dir, result, a.json)
}

pub fn resume(file: &FileConfig, a: &ResumeArgs) -> Result<()> {
    let dir = RunDir::open(&a.run).with_context(|| format!("opening run {}", a.run.display()))?;
    let manifest = dir.manifest()?;
    let source: DataSource = manifest
        .config
        .data_source
        .as_deref()
        .ok_or_else(|| anyhow!("run has no recorded data source"))?
        .parse()?;
    let (dataset, _) = source.load()?;
    let settings = transport_settings(file, &a.transport);
    let (transports, _) = build_transports(&settings, false)?;
    let store_path = file.paths.rag_store.as_deref();
    let store = load_store(store_path, manifest.config.rag_n, transports.embedding.as_ref())?;
    let ctx = RunContext {
        transports: &transports,
        store: store.as_ref(),
        feedback: &dir,
        dir: Some(&dir),
    };
    let mut obs = SystemObservation::new(dataset, manifest.observation.text.clone());
    let result = orchestrator::resume(manifest, &mut obs, &ctx);
    run_outcome(&dir, result, a.json)
}

pub fn rag(file: &FileConfig, c: &RagCommand) -> Result<()> {
    match c {
        RagCommand::Build { out, seed_file, transport } => {
            let text = match seed_file {
                Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => SEED_EXAMPLES.to_string(),
            };
            let seed = parse_seed(&text)?;
            let t = TransportRegistry::builtin().build(&transport_settings(file, transport))?;
            let store = ExampleStore::from_seed(&seed, t.as_ref())?;
            store.save(out)?;
            out!("wrote {} examples ({}) to {}", store.len(), store.fingerprint, out.display());
        }
        RagCommand::Add { store: path, description, config_file, system, transport } => {
            let config = fs::read_to_string(config_file).with_context(|| format!("reading {}", config_file.display()))?;
            let n = system.as_deref().and_then(find_system).map_or(3, |s| s.dimension);
            if let Err(ds) = parse_candidate(&config, n) {
                let lines: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
                bail!("invalid candidate config:\n{}", lines.join("\n"));
            }
            let t = TransportRegistry::builtin().build(&transport_settings(file, transport))?;
            let mut store = ExampleStore::load(path)?;
            store.check_embedder(t.as_ref())?;
            let id = store.add_example(description, &config, system.clone(), t.as_ref())?;
            store.save(path)?;
            out!("added {id}; store holds {} examples", store.len());
        }
        RagCommand::Inspect { store: path, query, n, transport } => {
            let store = ExampleStore::load(path)?;
            out!("{} examples, embedder {}", store.len(), store.fingerprint);
            match query {
                None => {
                    for p in store.pairs() {
                        out!("{}\t{}\t{}", p.id, p.system.as_deref().unwrap_or("-"), p.description);
                    }
                }
                Some(q) => {
                    let t = TransportRegistry::builtin().build(&transport_settings(file, transport))?;
                    store.check_embedder(t.as_ref())?;
                    for r in store.retrieve(q, *n, t.as_ref())? {
                        out!("{:.6}\t{}\t{}", r.similarity, r.pair.id, r.pair.description);
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn summarize(file: &FileConfig, a: &SummarizeArgs) -> Result<()> {
    let source = DataSource::from_args(&a.data)?;
    let (dataset, _) = source.load()?;
    let traj = &dataset.train[0];
    let (want_data, want_image) = match (a.data_summary, a.image_summary) {
        (false, false) => (true, true),
        other => other,
    };
    if let Some(p) = &a.plot_out {
        let img = render_plot(traj, &PlotConfig::default());
        fs::write(p, &img.data).with_context(|| format!("writing {}", p.display()))?;
    }
    if a.dry_run {
        if want_data {
            out!("{}", summarize::data_prompt(traj, DEFAULT_MAX_ROWS));
        }
        if want_image {
            out!("{}", summarize::image_prompt(traj.dimension()));
        }
        return Ok(());
    }
    let t = TransportRegistry::builtin().build(&transport_settings(file, &a.transport))?;
    let mut obs = SystemObservation::new(dataset.clone(), None);
    obs.summarize(t.as_ref(), &dataset.system_id, want_data, want_image)?;
    if let Some(s) = obs.data_summary {
        out!("Data summary ({}):\n{}\n", s.template_version, s.text);
    }
    if let Some(s) = obs.image_summary {
        out!("Image summary ({}):\n{}", s.template_version, s.text);
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let sys = find_system(&a.system).ok_or_else(|| anyhow!("unknown system {:?}", a.system))?;
    let data = sys.default_dataset()?;
    let split = match a.split.as_str() {
        "train" => &data.train,
        "test" => &data.test,
        other => bail!("split must be train or test, got {other:?}"),
    };
    let traj = split
        .get(a.index)
        .ok_or_else(|| anyhow!("{} split has {} trajectories", a.split, split.len()))?;
    let csv = write_csv(traj);
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::Write::write_all(&mut std::io::stdout().lock(), csv.as_bytes())?,
    }
    Ok(())
}

pub fn systems() -> Result<()> {
    for s in registry() {
        let p = &s.protocol;
        out!(
            "{}\tdim {}\ttrain {}\ttest {}\tdt {}\tsteps {}\t{}",
            s.id,
            s.dimension,
            p.train_inits.len(),
            p.test_inits.len(),
            p.dt,
            p.steps,
            s.description
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_source_round_trips() {
        for s in [
            DataSource::System("lorenz".into()),
            DataSource::Csv {
                train: vec!["a.csv".into(), "b.csv".into()],
                test: vec!["c.csv".into()],
            },
        ] {
            assert_eq!(s.to_string().parse::<DataSource>().unwrap(), s);
        }
        assert!("tape:x".parse::<DataSource>().is_err());
    }

    #[test]
    fn fresh_run_paths_do_not_collide() {
        let d = tempfile::tempdir().unwrap();
        let a = fresh_run_path(d.path(), 3);
        fs::create_dir(&a).unwrap();
        let b = fresh_run_path(d.path(), 3);
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_string_lossy().ends_with("-seed3"));
    }
}
