//! Prompt assembly, sampling, the reflection loop and run persistence.

mod manifest;
mod prompt;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sindy_core::model::Provenance;
use sindy_core::specdsl::first_valid_candidate;
use sindy_core::{CandidateSpec, Dataset, OptimizerSpec, Score, SindyModel};
use thiserror::Error;

use crate::llm::{ChatRequest, ChatResponse, LlmError, Transport, Usage};
use crate::rag::{ExampleStore, RagError};
use crate::summarize::{render_fit_plot, render_plot, PlotConfig, SystemObservation};

pub use manifest::{
    AttemptRef, Event, FeedbackEntry, FeedbackError, FeedbackRecord, FeedbackSource, Finish,
    FinishReason, IterationRecord, ManifestError, NoFeedback, RunDir, RunManifest, RunState,
    RunStatus, RunSummary, ScheduledFeedback, FEEDBACK_FILE, MANIFEST_FILE, MODEL_FILE, PLOTS_DIR,
    STATUS_FILE, SUMMARY_FILE,
};
pub use prompt::{build_prompt, top_attempts, PromptExample, LIBRARY_DOC, MAIN_TEMPLATE_VERSION, OPTIMIZER_DOC};

pub const DEFAULT_SAMPLES_PER_ITERATION: usize = 30;
pub const DEFAULT_MAX_ITERATIONS: usize = 10;
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.99;
pub const DEFAULT_ATTEMPTS_IN_PROMPT: usize = 5;
/// Baselines below this magnitude leave the percentage improvement undefined.
pub const PI_BASELINE_EPSILON: f64 = 1e-12;

/// Which parts of the observation enter the prompt. All off is "None".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Ablation {
    pub text: bool,
    pub data: bool,
    pub image: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation { text: false, data: false, image: false };
    pub const TEXT: Ablation = Ablation { text: true, data: false, image: false };
    pub const DATA: Ablation = Ablation { text: false, data: true, image: false };
    pub const IMAGE: Ablation = Ablation { text: false, data: false, image: true };
    pub const ALL: Ablation = Ablation { text: true, data: true, image: true };

    fn parts(&self) -> Vec<&'static str> {
        [(self.text, "Text"), (self.data, "Data"), (self.image, "Image")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect()
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = self.parts();
        if parts.is_empty() {
            f.write_str("None")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    /// `none`, `all`, or parts joined by `+` or `,`, case-insensitive.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "" | "none" => return Ok(Self::NONE),
            "all" => return Ok(Self::ALL),
            _ => {}
        }
        let mut a = Self::NONE;
        for part in s.split(['+', ',']).map(str::trim) {
            match part {
                "text" | "t" => a.text = true,
                "data" | "d" => a.data = true,
                "image" | "i" => a.image = true,
                other => return Err(format!("unknown ablation part {other:?} (expected text, data, image, none or all)")),
            }
        }
        Ok(a)
    }
}

impl TryFrom<Vec<String>> for Ablation {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Self, String> {
        v.join("+").parse()
    }
}

impl From<Ablation> for Vec<String> {
    fn from(a: Ablation) -> Self {
        a.parts().into_iter().map(String::from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Prefix of every correlation id, usually the system id.
    pub label: String,
    pub ablation: Ablation,
    pub samples_per_iteration: usize,
    pub max_iterations: usize,
    /// Number of retrieved examples; 0 disables retrieval.
    pub rag_n: usize,
    /// Registry system left out of retrieval.
    pub rag_exclude: Option<String>,
    pub success_threshold: f64,
    pub attempts_in_prompt: usize,
    pub choose_optimizer: bool,
    pub seed: u64,
    /// Time to wait between iterations for new feedback; 0 does not wait.
    pub feedback_wait_secs: u64,
    /// Opaque description of where the data came from, used to resume.
    pub data_source: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "run".into(),
            ablation: Ablation::NONE,
            samples_per_iteration: DEFAULT_SAMPLES_PER_ITERATION,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rag_n: 0,
            rag_exclude: None,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            attempts_in_prompt: DEFAULT_ATTEMPTS_IN_PROMPT,
            choose_optimizer: true,
            seed: 0,
            feedback_wait_secs: 0,
            data_source: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.into()));
        if self.samples_per_iteration == 0 {
            return bad("samples_per_iteration must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if self.attempts_in_prompt == 0 {
            return bad("attempts_in_prompt must be positive");
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            return bad("success_threshold must lie in (0, 1]");
        }
        if self.label.is_empty() {
            return bad("label must not be empty");
        }
        Ok(())
    }
}

/// One sampled response and its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub iteration: usize,
    pub sample: usize,
    pub correlation_id: String,
    /// `None` when the transport failed for this sample.
    pub response: Option<String>,
    pub candidate: Option<CandidateSpec>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
    pub score: Score,
    #[serde(default)]
    pub equations: Vec<String>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: every sample failed, first error: {error}")]
    AllSamplesFailed { iteration: usize, error: LlmError },
    #[error("summarization: {0}")]
    Summary(LlmError),
    #[error("retrieval: {0}")]
    Rag(#[from] RagError),
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run already finished")]
    Finished,
}

/// A failed run and the manifest it left behind, which [`resume`] accepts.
#[derive(Debug)]
pub struct RunError {
    pub manifest: Box<RunManifest>,
    pub cause: OrchestratorError,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.cause, self.manifest.iterations.len())
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.cause)
    }
}

/// Transports per role; they may all be the same instance.
#[derive(Clone)]
pub struct Transports {
    pub generation: Arc<dyn Transport>,
    pub summary: Arc<dyn Transport>,
    pub embedding: Arc<dyn Transport>,
}

impl Transports {
    pub fn single(t: Arc<dyn Transport>) -> Self {
        Self {
            generation: t.clone(),
            summary: t.clone(),
            embedding: t,
        }
    }

    fn usage(&self) -> Usage {
        let mut seen: Vec<*const ()> = Vec::new();
        let mut total = Usage::default();
        for t in [&self.generation, &self.summary, &self.embedding] {
            let p = Arc::as_ptr(t) as *const ();
            if !seen.contains(&p) {
                seen.push(p);
                let u = t.usage();
                total.prompt_tokens += u.prompt_tokens;
                total.completion_tokens += u.completion_tokens;
                total.requests += u.requests;
            }
        }
        total
    }
}

/// Everything a run reads besides its config and observation.
pub struct RunContext<'a> {
    pub transports: &'a Transports,
    pub store: Option<&'a ExampleStore>,
    pub feedback: &'a dyn FeedbackSource,
    pub dir: Option<&'a RunDir>,
}

type Evaluated = (Option<Arc<SindyModel>>, Score);

/// Fit results keyed by canonical candidate text; fits are deterministic.
/// Returned models always carry the provenance passed in, whichever attempt
/// filled the entry.
#[derive(Default)]
pub struct FitCache {
    entries: Mutex<HashMap<String, Evaluated>>,
}

impl FitCache {
    fn evaluate(&self, dataset: &Dataset, spec: &CandidateSpec, provenance: Provenance) -> Evaluated {
        let retag = |(model, score): Evaluated| -> Evaluated {
            let model = model.map(|m| match m.provenance() {
                Some(p) if *p == provenance => m,
                _ => Arc::new(m.with_provenance(provenance.clone())),
            });
            (model, score)
        };
        let key = spec.serialize();
        if let Some(hit) = self.entries.lock().expect("fit cache poisoned").get(&key) {
            return retag(hit.clone());
        }
        let out = match SindyModel::fit_candidate(dataset, &spec.library, &spec.optimizer, provenance.clone()) {
            Ok(m) => {
                let s = m.score(dataset);
                (Some(Arc::new(m)), s)
            }
            Err(e) => (None, Score::failed(e.to_string(), dataset.dimension())),
        };
        let stored = self
            .entries
            .lock()
            .expect("fit cache poisoned")
            .entry(key)
            .or_insert(out)
            .clone();
        retag(stored)
    }
}

/// Attempts of one sampling round, ordered by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub attempts: Vec<Attempt>,
    /// Index into `attempts` of the round's best.
    pub best: usize,
    pub usage: Usage,
}

fn sample_seed(seed: u64, iteration: usize, sample: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates.
    let mut z = seed ^ ((iteration as u64) << 32 | sample as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn correlation_id(label: &str, iteration: usize, sample: usize) -> String {
    format!("{label}/iter{iteration}/sample{sample}")
}

/// Index of the best attempt: highest test R2, ties to fewer terms, then
/// the lowest sample index.
pub fn best_index(attempts: &[Attempt]) -> usize {
    let mut best = 0;
    for (i, a) in attempts.iter().enumerate().skip(1) {
        if a.score.better_than(&attempts[best].score) {
            best = i;
        }
    }
    best
}

fn evaluate_response(
    config: &RunConfig,
    dataset: &Dataset,
    cache: &FitCache,
    iteration: usize,
    sample: usize,
    response: Result<ChatResponse, LlmError>,
) -> Attempt {
    let cid = correlation_id(&config.label, iteration, sample);
    let n = dataset.dimension();
    let mut attempt = Attempt {
        iteration,
        sample,
        correlation_id: cid.clone(),
        response: None,
        candidate: None,
        diagnostics: Vec::new(),
        score: Score::failed("", n),
        equations: Vec::new(),
    };
    let text = match response {
        Ok(r) => r.text,
        Err(e) => {
            attempt.score = Score::failed(format!("transport: {e}"), n);
            return attempt;
        }
    };
    attempt.response = Some(text.clone());
    let parsed = match first_valid_candidate(&text, n) {
        Ok(p) => p,
        Err(f) => {
            attempt.diagnostics = f.diagnostics.iter().map(|d| d.to_string()).collect();
            attempt.score = Score::failed("no valid candidate block", n);
            return attempt;
        }
    };
    attempt.diagnostics = parsed.warnings.iter().map(|d| d.to_string()).collect();
    let mut spec = parsed.spec;
    if !config.choose_optimizer && spec.optimizer != OptimizerSpec::default() {
        spec.optimizer = OptimizerSpec::default();
        attempt.diagnostics.push(format!("optimizer pinned to {}", spec.optimizer));
    }
    let (model, score) = cache.evaluate(dataset, &spec, Provenance { candidate_id: cid, iteration });
    if let Some(m) = &model {
        attempt.equations = m.equation_text();
    }
    attempt.candidate = Some(spec);
    attempt.score = score;
    attempt
}

/// Samples `samples_per_iteration` responses to `prompt` and scores each.
/// Fails only when the transport failed for every sample.
pub fn one_step(
    config: &RunConfig,
    dataset: &Dataset,
    prompt: &str,
    iteration: usize,
    transport: &dyn Transport,
    cache: &FitCache,
) -> Result<StepOutcome, OrchestratorError> {
    let s_total = config.samples_per_iteration;
    let requests: Vec<ChatRequest> = (0..s_total)
        .map(|s| {
            let mut r = ChatRequest::generation(prompt, correlation_id(&config.label, iteration, s));
            r.seed = Some(sample_seed(config.seed, iteration, s));
            r
        })
        .collect();
    let chunk = transport.max_concurrency().max(1);
    let mut responses: Vec<Result<ChatResponse, LlmError>> = Vec::with_capacity(s_total);
    for batch in requests.chunks(chunk) {
        if batch.len() == 1 {
            responses.push(transport.chat(&batch[0]));
            continue;
        }
        std::thread::scope(|sc| {
            let handles: Vec<_> = batch.iter().map(|r| sc.spawn(move || transport.chat(r))).collect();
            for h in handles {
                responses.push(h.join().expect("sampling thread panicked"));
            }
        });
    }
    if responses.iter().all(|r| r.is_err()) {
        let error = responses.into_iter().find_map(Result::err).expect("at least one sample");
        return Err(OrchestratorError::AllSamplesFailed { iteration, error });
    }
    let usage = responses.iter().filter_map(|r| r.as_ref().ok()).fold(Usage::default(), |mut u, r| {
        u.prompt_tokens += r.usage.prompt_tokens;
        u.completion_tokens += r.usage.completion_tokens;
        u.requests += r.usage.requests;
        u
    });
    let attempts: Vec<Attempt> = responses
        .into_par_iter()
        .enumerate()
        .map(|(s, r)| evaluate_response(config, dataset, cache, iteration, s, r))
        .collect();
    let best = best_index(&attempts);
    Ok(StepOutcome { attempts, best, usage })
}

/// `100 (final - baseline) / |baseline|` over best test R2, with the
/// baseline taken after iteration 1. `None` when undefined.
pub fn percentage_improvement(manifest: &RunManifest) -> Option<f64> {
    let baseline = manifest.iterations.first()?.best.score.r2_test;
    let last = manifest.best_so_far()?.score.r2_test;
    if !baseline.is_finite() || !last.is_finite() || baseline.abs() < PI_BASELINE_EPSILON {
        return None;
    }
    Some(100.0 * (last - baseline) / baseline.abs())
}

/// Replaces the incumbent only by a strictly better attempt whose test R2
/// is not lower, so the best-so-far R2 never decreases.
fn improves(candidate: &Score, incumbent: &Score) -> bool {
    candidate.better_than(incumbent) && !(candidate.r2_test < incumbent.r2_test)
}

struct Driver<'a> {
    observation: &'a mut SystemObservation,
    ctx: &'a RunContext<'a>,
    manifest: RunManifest,
    cache: FitCache,
    usage: Usage,
}

impl Driver<'_> {
    fn emit(&mut self, event: Event) -> Result<(), OrchestratorError> {
        if let Some(d) = self.ctx.dir {
            d.append(&event)?;
        }
        self.manifest.apply(&event)?;
        Ok(())
    }

    fn status(&self, state: RunState, message: Option<String>) {
        if let Some(d) = self.ctx.dir {
            let _ = d.write_status(&RunStatus {
                state,
                iteration: self.manifest.iterations.len(),
                max_iterations: self.manifest.config.max_iterations,
                message,
            });
        }
    }

    fn fail(mut self, cause: OrchestratorError) -> RunError {
        let iteration = self.manifest.iterations.len() + 1;
        let _ = self.emit(Event::Abort { iteration, error: cause.to_string() });
        self.status(RunState::Failed, Some(cause.to_string()));
        self.write_summary(RunState::Failed);
        RunError { manifest: Box::new(self.manifest), cause }
    }

    fn write_summary(&self, state: RunState) {
        let Some(d) = self.ctx.dir else { return };
        let m = &self.manifest;
        let best = m.best_so_far().cloned();
        let summary = RunSummary {
            label: m.config.label.clone(),
            state,
            iterations: m.iterations.len(),
            attempts: m.attempts().count(),
            equations: best
                .as_ref()
                .and_then(|b| m.attempt(b))
                .map(|a| a.equations.clone())
                .unwrap_or_default(),
            best,
            r2_history: m.r2_history(),
            percentage_improvement: percentage_improvement(m),
            usage: self.usage,
        };
        let _ = d.write_summary(&summary);
    }

    fn prepare_observation(&mut self) -> Result<(), OrchestratorError> {
        let ab = self.manifest.config.ablation;
        let record = self.manifest.observation.clone();
        self.observation.apply(&record);
        let label = self.manifest.config.label.clone();
        self.observation
            .summarize(self.ctx.transports.summary.as_ref(), &label, ab.data, ab.image)
            .map_err(OrchestratorError::Summary)?;
        let now = self.observation.record();
        if now != record {
            self.emit(Event::Observation { observation: now })?;
        }
        Ok(())
    }

    fn retrieve(&self) -> Result<(Vec<String>, Vec<PromptExample>), OrchestratorError> {
        let c = &self.manifest.config;
        let (Some(store), Some(query)) = (self.ctx.store, self.manifest.observation.text.as_deref()) else {
            return Ok((Vec::new(), Vec::new()));
        };
        if c.rag_n == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let hits = store.retrieve_excluding(query, c.rag_n, self.ctx.transports.embedding.as_ref(), c.rag_exclude.as_deref())?;
        Ok((
            hits.iter().map(|h| h.pair.id.clone()).collect(),
            hits.iter()
                .map(|h| PromptExample {
                    description: h.pair.description.clone(),
                    config: h.pair.config.clone(),
                })
                .collect(),
        ))
    }

    fn pull_feedback(&mut self, iteration: usize) -> Result<(), OrchestratorError> {
        let wait = self.manifest.config.feedback_wait_secs;
        let deadline = Instant::now() + Duration::from_secs(wait);
        let mut waiting = false;
        loop {
            let known: HashSet<String> = self.manifest.feedback.iter().map(|f| f.entry.id.clone()).collect();
            let fresh: Vec<FeedbackEntry> = self
                .ctx
                .feedback
                .available(iteration)
                .into_iter()
                .filter(|e| !known.contains(&e.id))
                .collect();
            let got = !fresh.is_empty();
            for entry in fresh {
                self.emit(Event::Feedback(FeedbackRecord { entry, iteration }))?;
            }
            if got || wait == 0 || iteration == 1 || Instant::now() >= deadline {
                break;
            }
            if !waiting {
                self.status(RunState::AwaitingFeedback, None);
                waiting = true;
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        if waiting {
            self.status(RunState::Running, None);
        }
        Ok(())
    }

    fn best_model(&self, best: &AttemptRef) -> Option<Arc<SindyModel>> {
        let a = self.manifest.attempt(best)?;
        let spec = a.candidate.as_ref()?;
        let provenance = Provenance {
            candidate_id: a.correlation_id.clone(),
            iteration: a.iteration,
        };
        self.cache.evaluate(&self.observation.data, spec, provenance).0
    }

    fn plot(&self, iteration: usize, best: &AttemptRef) {
        let Some(d) = self.ctx.dir else { return };
        let test = &self.observation.data.test[0];
        let cfg = PlotConfig::default();
        let t = test.times();
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1).max(1) as f64;
        let image = self
            .best_model(best)
            .and_then(|m| m.simulate(&test.state(0), dt, t.len() - 1).ok())
            .map(|sim| render_fit_plot(test, &sim, &cfg))
            .unwrap_or_else(|| render_plot(test, &cfg));
        let _ = d.write_plot(iteration, &image);
    }

    fn finish(&mut self, reason: FinishReason) -> Result<(), OrchestratorError> {
        let best = self.manifest.best_so_far().cloned().expect("at least one iteration");
        let model = self.best_model(&best);
        let equations = model.as_ref().map(|m| m.equation_text()).unwrap_or_default();
        let file = model.map(|m| m.to_file());
        if let (Some(d), Some(f)) = (self.ctx.dir, &file) {
            d.write_model(f)?;
        }
        self.emit(Event::Finish(Finish { reason, best, equations, model: file }))?;
        self.status(RunState::Done, None);
        self.write_summary(RunState::Done);
        Ok(())
    }

    fn reached(&self) -> bool {
        self.manifest
            .best_so_far()
            .is_some_and(|b| b.score.r2_test > self.manifest.config.success_threshold)
    }

    fn iterate(&mut self) -> Result<(), OrchestratorError> {
        self.prepare_observation()?;
        let (rag_ids, examples) = self.retrieve()?;
        let max = self.manifest.config.max_iterations;
        while !self.reached() && self.manifest.iterations.len() < max {
            let k = self.manifest.iterations.len() + 1;
            self.status(RunState::Running, None);
            self.pull_feedback(k)?;
            let c = &self.manifest.config;
            let shown = top_attempts(self.manifest.attempts(), c.attempts_in_prompt);
            let feedback: Vec<String> = self.manifest.feedback.iter().map(|f| f.entry.text.clone()).collect();
            let prompt = build_prompt(c, &self.manifest.observation, &examples, &shown, &feedback);
            let step = one_step(
                c,
                &self.observation.data,
                &prompt,
                k,
                self.ctx.transports.generation.as_ref(),
                &self.cache,
            )?;
            let best = AttemptRef::of(&step.attempts[step.best]);
            let best_so_far = match self.manifest.best_so_far() {
                Some(prev) if !improves(&best.score, &prev.score) => prev.clone(),
                _ => best.clone(),
            };
            self.usage = self.ctx.transports.usage();
            self.emit(Event::Iteration(IterationRecord {
                iteration: k,
                prompt,
                rag_examples: rag_ids.clone(),
                attempts: step.attempts,
                best,
                best_so_far: best_so_far.clone(),
                usage: step.usage,
            }))?;
            self.plot(k, &best_so_far);
            self.write_summary(RunState::Running);
        }
        let reason = if self.reached() {
            FinishReason::Threshold
        } else {
            FinishReason::MaxIterations
        };
        self.finish(reason)
    }
}

fn drive(
    manifest: RunManifest,
    observation: &mut SystemObservation,
    ctx: &RunContext<'_>,
) -> Result<RunManifest, RunError> {
    let mut d = Driver {
        observation,
        ctx,
        manifest,
        cache: FitCache::default(),
        usage: Usage::default(),
    };
    match d.iterate() {
        Ok(()) => Ok(d.manifest),
        Err(e) => Err(d.fail(e)),
    }
}

/// Runs the reflection loop from scratch: iteration 1 samples without
/// previous attempts; later iterations show the best attempts so far and any
/// new feedback. Stops once the best test R2 exceeds the success threshold or
/// after `max_iterations`.
pub fn reflect(
    config: &RunConfig,
    observation: &mut SystemObservation,
    ctx: &RunContext<'_>,
) -> Result<RunManifest, RunError> {
    let manifest = RunManifest::new(config.clone());
    let start = Event::Start { config: config.clone() };
    let early = |cause: OrchestratorError| RunError {
        manifest: Box::new(RunManifest::new(config.clone())),
        cause,
    };
    config.validate().map_err(early)?;
    if let Some(d) = ctx.dir {
        d.append(&start).map_err(|e| early(e.into()))?;
    }
    drive(manifest, observation, ctx)
}

/// Continues an unfinished run from its last completed iteration.
pub fn resume(
    manifest: RunManifest,
    observation: &mut SystemObservation,
    ctx: &RunContext<'_>,
) -> Result<RunManifest, RunError> {
    if manifest.is_finished() {
        return Err(RunError {
            manifest: Box::new(manifest),
            cause: OrchestratorError::Finished,
        });
    }
    drive(manifest, observation, ctx)
}
