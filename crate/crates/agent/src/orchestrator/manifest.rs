use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sindy_core::model::ModelFile;
use sindy_core::Score;
use thiserror::Error;

use super::{Attempt, RunConfig};
use crate::llm::{ImagePayload, Usage};
use crate::summarize::ObservationRecord;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const STATUS_FILE: &str = "status.json";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const PLOTS_DIR: &str = "plots";

/// Position and score of one attempt, as carried in iteration summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRef {
    pub iteration: usize,
    pub sample: usize,
    pub score: Score,
}

impl AttemptRef {
    pub fn of(a: &Attempt) -> Self {
        Self {
            iteration: a.iteration,
            sample: a.sample,
            score: a.score.clone(),
        }
    }
}

/// One completed sampling round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt: String,
    /// Ids of the retrieved example pairs shown in the prompt.
    #[serde(default)]
    pub rag_examples: Vec<String>,
    pub attempts: Vec<Attempt>,
    pub best: AttemptRef,
    pub best_so_far: AttemptRef,
    /// Sum of per-response usage reported by the transport.
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub id: String,
    pub text: String,
    pub submitted_at: String,
}

/// A feedback entry and the iteration whose prompt first included it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub entry: FeedbackEntry,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Threshold,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finish {
    pub reason: FinishReason,
    pub best: AttemptRef,
    pub equations: Vec<String>,
    pub model: Option<ModelFile>,
}

/// Line of the append-only run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Start { config: RunConfig },
    Observation { observation: ObservationRecord },
    Feedback(FeedbackRecord),
    Iteration(IterationRecord),
    Abort { iteration: usize, error: String },
    Finish(Finish),
}

/// A run folded from its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub observation: ObservationRecord,
    pub iterations: Vec<IterationRecord>,
    pub feedback: Vec<FeedbackRecord>,
    pub aborts: Vec<(usize, String)>,
    pub finish: Option<Finish>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest: {0}")]
    Invalid(String),
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            observation: ObservationRecord::default(),
            iterations: Vec::new(),
            feedback: Vec::new(),
            aborts: Vec::new(),
            finish: None,
        }
    }

    pub fn from_events(events: &[Event]) -> Result<Self, ManifestError> {
        let mut it = events.iter();
        let Some(Event::Start { config }) = it.next() else {
            return Err(ManifestError::Invalid("log does not begin with a start event".into()));
        };
        let mut m = Self::new(config.clone());
        for e in it {
            m.apply(e)?;
        }
        Ok(m)
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ManifestError> {
        if self.finish.is_some() {
            return Err(ManifestError::Invalid("event after finish".into()));
        }
        match event {
            Event::Start { .. } => return Err(ManifestError::Invalid("second start event".into())),
            Event::Observation { observation } => self.observation = observation.clone(),
            Event::Feedback(f) => self.feedback.push(f.clone()),
            Event::Iteration(r) => {
                if r.iteration != self.iterations.len() + 1 {
                    return Err(ManifestError::Invalid(format!(
                        "iteration {} follows {}",
                        r.iteration,
                        self.iterations.len()
                    )));
                }
                self.iterations.push(r.clone());
            }
            Event::Abort { iteration, error } => self.aborts.push((*iteration, error.clone())),
            Event::Finish(f) => self.finish = Some(f.clone()),
        }
        Ok(())
    }

    pub fn attempts(&self) -> impl Iterator<Item = &Attempt> {
        self.iterations.iter().flat_map(|r| &r.attempts)
    }

    pub fn best_so_far(&self) -> Option<&AttemptRef> {
        self.iterations.last().map(|r| &r.best_so_far)
    }

    pub fn attempt(&self, r: &AttemptRef) -> Option<&Attempt> {
        self.iterations
            .get(r.iteration.checked_sub(1)?)?
            .attempts
            .iter()
            .find(|a| a.sample == r.sample)
    }

    pub fn is_finished(&self) -> bool {
        self.finish.is_some()
    }

    /// Best-so-far test R2 after each iteration.
    pub fn r2_history(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.best_so_far.score.r2_test).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    Running,
    AwaitingFeedback,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub state: RunState,
    pub iteration: usize,
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Final summary document of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub state: RunState,
    pub iterations: usize,
    pub attempts: usize,
    pub best: Option<AttemptRef>,
    pub equations: Vec<String>,
    #[serde(with = "sindy_core::model::serde_r2::vec")]
    pub r2_history: Vec<f64>,
    pub percentage_improvement: Option<f64>,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("feedback text is empty")]
    Empty,
    #[error("run is finished")]
    Finished,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Directory holding every artifact of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn append_line(path: &Path, line: &str) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    f.flush()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    // A trailing line without newline may still be being written.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ManifestError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(PLOTS_DIR))?;
        Ok(Self { root })
    }

    /// Opens an existing run; fails when there is no manifest.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        if !root.join(MANIFEST_FILE).is_file() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} has no {MANIFEST_FILE}", root.display()),
            ));
        }
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn id(&self) -> String {
        self.root
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn append(&self, event: &Event) -> io::Result<()> {
        let line = serde_json::to_string(event).map_err(io::Error::other)?;
        append_line(&self.root.join(MANIFEST_FILE), &line)
    }

    pub fn events(&self) -> Result<Vec<Event>, ManifestError> {
        read_jsonl(&self.root.join(MANIFEST_FILE))
    }

    pub fn manifest(&self) -> Result<RunManifest, ManifestError> {
        RunManifest::from_events(&self.events()?)
    }

    pub fn write_status(&self, status: &RunStatus) -> io::Result<()> {
        let text = serde_json::to_vec_pretty(status).map_err(io::Error::other)?;
        write_atomic(&self.root.join(STATUS_FILE), &text)
    }

    pub fn status(&self) -> Option<RunStatus> {
        let text = fs::read_to_string(self.root.join(STATUS_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write_summary(&self, summary: &RunSummary) -> io::Result<()> {
        let text = serde_json::to_vec_pretty(summary).map_err(io::Error::other)?;
        write_atomic(&self.root.join(SUMMARY_FILE), &text)
    }

    pub fn summary(&self) -> Option<RunSummary> {
        let text = fs::read_to_string(self.root.join(SUMMARY_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write_model(&self, model: &ModelFile) -> io::Result<()> {
        let text = serde_json::to_vec_pretty(model).map_err(io::Error::other)?;
        write_atomic(&self.root.join(MODEL_FILE), &text)
    }

    pub fn plot_path(&self, iteration: usize) -> PathBuf {
        self.root.join(PLOTS_DIR).join(format!("iter{iteration}.png"))
    }

    pub fn write_plot(&self, iteration: usize, image: &ImagePayload) -> io::Result<()> {
        fs::create_dir_all(self.root.join(PLOTS_DIR))?;
        write_atomic(&self.plot_path(iteration), &image.data)
    }

    pub fn feedback_entries(&self) -> Result<Vec<FeedbackEntry>, ManifestError> {
        read_jsonl(&self.root.join(FEEDBACK_FILE))
    }

    /// Queues feedback for the next iteration. Resubmitting an existing id
    /// returns the stored entry unchanged.
    pub fn submit_feedback(&self, text: &str, id: Option<String>) -> Result<FeedbackEntry, FeedbackError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(FeedbackError::Empty);
        }
        if self.status().is_some_and(|s| s.state == RunState::Done) {
            return Err(FeedbackError::Finished);
        }
        let existing = self.feedback_entries().unwrap_or_default();
        if let Some(id) = &id {
            if let Some(e) = existing.iter().find(|e| &e.id == id) {
                return Ok(e.clone());
            }
        }
        let entry = FeedbackEntry {
            id: id.unwrap_or_else(|| format!("fb{}", existing.len() + 1)),
            text: text.to_string(),
            submitted_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        append_line(&self.root.join(FEEDBACK_FILE), &line)?;
        Ok(entry)
    }
}

/// Where the orchestrator pulls human feedback from between iterations.
pub trait FeedbackSource: Send + Sync {
    /// Every entry available before iteration `iteration` starts. Entries
    /// already consumed are filtered out by id.
    fn available(&self, iteration: usize) -> Vec<FeedbackEntry>;
}

pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn available(&self, _: usize) -> Vec<FeedbackEntry> {
        Vec::new()
    }
}

/// Entries that become available from a given iteration on.
pub struct ScheduledFeedback(pub Vec<(usize, FeedbackEntry)>);

impl FeedbackSource for ScheduledFeedback {
    fn available(&self, iteration: usize) -> Vec<FeedbackEntry> {
        self.0
            .iter()
            .filter(|(k, _)| *k <= iteration)
            .map(|(_, e)| e.clone())
            .collect()
    }
}

impl FeedbackSource for RunDir {
    fn available(&self, _: usize) -> Vec<FeedbackEntry> {
        self.feedback_entries().unwrap_or_default()
    }
}
