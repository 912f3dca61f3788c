//! Benchmark sweeps: every selected system under every selected ablation,
//! one independent run each, summarized as threshold percentages.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use sindy_agent::llm::TransportSettings;
use sindy_agent::orchestrator::{self, Ablation, FinishReason, RunConfig, RunContext, RunDir, RunManifest};
use sindy_agent::rag::ExampleStore;
use sindy_agent::summarize::SystemObservation;
use sindy_core::dynamics::{find_system, registry};
use sindy_core::model::serde_r2;
use sindy_core::SystemDefinition;

use crate::commands::{build_transports, fresh_run_path, DataSource};
use crate::config::FileConfig;
use crate::{resolve, BenchArgs};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const RUNS_SUBDIR: &str = "runs";
/// Strict lower bounds for the aggregate percentages.
pub const THRESHOLDS: [f64; 2] = [0.9, 0.99];
pub const CSV_HEADER: &str = "system,ablation,r2_train,r2_test,iterations,active_terms,status";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub system: String,
    pub ablation: String,
    pub r2_train: f64,
    pub r2_test: f64,
    pub iterations: usize,
    pub active_terms: usize,
    /// `threshold`, `max-iterations` or `failed`.
    pub status: String,
}

/// Share of runs of one ablation whose best R2 exceeds each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub ablation: String,
    pub runs: usize,
    /// Percent per entry of [`THRESHOLDS`].
    pub train: Vec<f64>,
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

impl BenchReport {
    /// One entry per ablation, in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.ablation.as_str()) {
                order.push(&r.ablation);
            }
        }
        order
            .into_iter()
            .map(|ab| {
                let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.ablation == ab).collect();
                let share = |f: &dyn Fn(&BenchRow) -> f64| -> Vec<f64> {
                    THRESHOLDS
                        .iter()
                        .map(|&t| percent(rows.iter().filter(|r| f(r) > t).count(), rows.len()))
                        .collect()
                };
                Aggregate {
                    ablation: ab.to_string(),
                    runs: rows.len(),
                    train: share(&|r| r.r2_train),
                    test: share(&|r| r.r2_test),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.system,
                r.ablation,
                serde_r2::format(r.r2_train),
                serde_r2::format(r.r2_test),
                r.iterations,
                r.active_terms,
                r.status
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            bail!("report must start with `{CSV_HEADER}`");
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let [system, ablation, r2_train, r2_test, iterations, active_terms, status] = f[..] else {
                bail!("row {}: expected 7 fields, got {}", k + 1, f.len());
            };
            let num = |s: &str| serde_r2::parse(s).ok_or_else(|| anyhow!("row {}: bad R2 {s:?}", k + 1));
            rows.push(BenchRow {
                system: system.into(),
                ablation: ablation.into(),
                r2_train: num(r2_train)?,
                r2_test: num(r2_test)?,
                iterations: iterations.parse().with_context(|| format!("row {}", k + 1))?,
                active_terms: active_terms.parse().with_context(|| format!("row {}", k + 1))?,
                status: status.into(),
            });
        }
        Ok(Self { rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut head = format!("{:<18} {:>5}", "ablation", "runs");
        for split in ["train", "test"] {
            for t in THRESHOLDS {
                head.push_str(&format!(" {:>12}", format!("{split}>{t}")));
            }
        }
        let _ = writeln!(out, "{head}");
        for a in self.aggregates() {
            let _ = write!(out, "{:<18} {:>5}", a.ablation, a.runs);
            for v in a.train.iter().chain(&a.test) {
                let _ = write!(out, " {:>11.1}%", v);
            }
            out.push('\n');
        }
        out
    }
}

/// Everything a sweep needs besides the systems themselves.
pub struct BenchPlan<'a> {
    pub systems: Vec<SystemDefinition>,
    pub ablations: Vec<Ablation>,
    pub base: RunConfig,
    pub transport: TransportSettings,
    pub store: Option<&'a ExampleStore>,
    pub jobs: usize,
    /// Run directories go under `<out>/runs/` when set.
    pub out: Option<PathBuf>,
}

fn ablation_slug(a: Ablation) -> String {
    a.to_string().to_lowercase()
}

fn row_of(system: &str, ablation: Ablation, manifest: &RunManifest, failed: bool) -> BenchRow {
    let best = manifest.best_so_far();
    let status = match (&manifest.finish, failed) {
        (_, true) | (None, _) => "failed",
        (Some(f), false) => match f.reason {
            FinishReason::Threshold => "threshold",
            FinishReason::MaxIterations => "max-iterations",
        },
    };
    BenchRow {
        system: system.into(),
        ablation: ablation.to_string(),
        r2_train: best.map_or(f64::NEG_INFINITY, |b| b.score.r2_train),
        r2_test: best.map_or(f64::NEG_INFINITY, |b| b.score.r2_test),
        iterations: manifest.iterations.len(),
        active_terms: best.map_or(0, |b| b.score.active_terms),
        status: status.into(),
    }
}

fn run_one(plan: &BenchPlan<'_>, sys: &SystemDefinition, ablation: Ablation) -> Result<BenchRow> {
    let slug = ablation_slug(ablation);
    let mut config = plan.base.clone();
    config.label = format!("{slug}/{}", sys.id);
    config.ablation = ablation;
    config.rag_exclude = Some(sys.id.clone());
    config.data_source = Some(DataSource::System(sys.id.clone()).to_string());
    let dataset = sys.default_dataset()?;
    let (transports, _) = build_transports(&plan.transport, false)?;
    let dir = match &plan.out {
        Some(out) => Some(RunDir::create(out.join(RUNS_SUBDIR).join(format!("{slug}-{}", sys.id)))?),
        None => None,
    };
    let ctx = RunContext {
        transports: &transports,
        store: plan.store,
        feedback: &orchestrator::NoFeedback,
        dir: dir.as_ref(),
    };
    let mut obs = SystemObservation::new(dataset, Some(sys.description.clone()));
    Ok(match orchestrator::reflect(&config, &mut obs, &ctx) {
        Ok(m) => row_of(&sys.id, ablation, &m, false),
        Err(e) => row_of(&sys.id, ablation, &e.manifest, true),
    })
}

/// Runs all (ablation, system) pairs on `jobs` threads. Rows are ordered by
/// ablation, then by system, regardless of completion order.
pub fn run_bench(plan: &BenchPlan<'_>) -> Result<BenchReport> {
    let pairs: Vec<(Ablation, &SystemDefinition)> = plan
        .ablations
        .iter()
        .flat_map(|&a| plan.systems.iter().map(move |s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.jobs.max(1)).build()?;
    let rows = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(a, s)| run_one(plan, s, a))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport { rows })
}

pub fn parse_systems(list: &str) -> Result<Vec<SystemDefinition>> {
    match list.trim() {
        "all" => Ok(registry()),
        "" => Ok(Vec::new()),
        l => l
            .split(',')
            .map(|id| find_system(id.trim()).ok_or_else(|| anyhow!("unknown system {id:?}")))
            .collect(),
    }
}

pub fn parse_ablations(list: &str) -> Result<Vec<Ablation>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Ablation>().map_err(anyhow::Error::msg))
        .collect()
}

pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_CSV), report.to_csv())?;
    fs::write(dir.join(REPORT_TXT), report.to_text())?;
    Ok(())
}

pub fn command(file: &FileConfig, a: &BenchArgs) -> Result<()> {
    let settings = resolve(file, &a.run, &a.transport)?;
    let store = match (settings.run.rag_n, &settings.rag_store) {
        (0, _) => None,
        (_, Some(p)) => Some(ExampleStore::load(p).with_context(|| format!("loading {}", p.display()))?),
        (_, None) => bail!("retrieval needs --rag-store (or set rag_n = 0)"),
    };
    let out = a.out.clone().unwrap_or_else(|| fresh_run_path(&settings.runs_dir, settings.run.seed));
    let plan = BenchPlan {
        systems: parse_systems(&a.systems)?,
        ablations: parse_ablations(&a.ablations)?,
        base: settings.run,
        transport: settings.transport,
        store: store.as_ref(),
        jobs: a.jobs,
        out: Some(out.clone()),
    };
    let report = run_bench(&plan)?;
    write_report(&out, &report)?;
    std::io::Write::write_all(&mut std::io::stdout().lock(), report.to_text().as_bytes())?;
    out!("report: {}", out.join(REPORT_CSV).display());
    Ok(())
}
