use std::collections::HashSet;
use std::fmt::Write;

use sindy_core::fmt::sig;

use super::{Attempt, RunConfig};
use crate::summarize::ObservationRecord;

pub const MAIN_TEMPLATE_VERSION: &str = "main.v1";
pub const LIBRARY_DOC: &str = include_str!("../../templates/library_doc.v1.md");
pub const OPTIMIZER_DOC: &str = include_str!("../../templates/optimizer_doc.v1.md");

/// Longest excerpt of a failed response shown back to the model.
const EXCERPT_CHARS: usize = 1500;
const SCORE_DIGITS: usize = 6;

/// A retrieved example as shown in the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptExample {
    pub description: String,
    pub config: String,
}

fn dedup_key(a: &Attempt) -> String {
    match &a.candidate {
        Some(c) => c.serialize(),
        None => a.response.clone().unwrap_or_default(),
    }
}

/// The `k` best attempts by test R2 (ties to fewer terms, then earlier
/// attempts), one per distinct candidate.
pub fn top_attempts<'a>(attempts: impl IntoIterator<Item = &'a Attempt>, k: usize) -> Vec<&'a Attempt> {
    let mut all: Vec<&Attempt> = attempts.into_iter().collect();
    all.sort_by(|a, b| {
        b.score
            .rank(&a.score)
            .then(a.iteration.cmp(&b.iteration))
            .then(a.sample.cmp(&b.sample))
    });
    let mut seen = HashSet::new();
    all.into_iter().filter(|a| seen.insert(dedup_key(a))).take(k).collect()
}

fn excerpt(text: &str) -> String {
    let mut s: String = text.chars().take(EXCERPT_CHARS).collect();
    if text.chars().count() > EXCERPT_CHARS {
        s.push_str("\n...");
    }
    s
}

fn fenced(out: &mut String, body: &str) {
    out.push_str("```toml\n");
    out.push_str(body.trim_end());
    out.push_str("\n```\n");
}

fn example_block(choose_optimizer: bool) -> String {
    let mut s = String::from(
        "schema_version = 1\n\n[[library]]\ntype = \"polynomial\"\ndegree = 2\n\n[[library]]\ntype = \"custom\"\nterms = [\"sin(x0)\"]\n",
    );
    if choose_optimizer {
        s.push_str("\n[optimizer]\ntype = \"STLSQ\"\nthreshold = 0.1\n");
    }
    s
}

/// Renders the generation prompt. Sections without content are left out
/// entirely.
pub fn build_prompt(
    config: &RunConfig,
    observation: &ObservationRecord,
    examples: &[PromptExample],
    attempts: &[&Attempt],
    feedback: &[String],
) -> String {
    let opt = config.choose_optimizer;
    let mut p = String::new();
    p.push_str(
        "You are an expert in data-driven modelling of dynamical systems. We use Sparse \
         Identification of Nonlinear Dynamics (SINDy): the time derivative of the state is \
         modelled as a sparse linear combination of candidate features.\n",
    );
    p.push_str("*Requirements:*\n");
    p.push_str("* If a system observation is given, analyze it and identify relevant primitive functions.\n");
    p.push_str("* Make good use of the available feature libraries.\n");
    p.push_str("* Build a comprehensive feature library containing those primitive functions.\n");
    p.push_str("* Answer with exactly one candidate in a fenced ```toml block following the grammar below (no usage examples).\n");
    if opt {
        p.push_str("* If a system observation is given, also use it to pick a suitable optimizer.\n");
        p.push_str("* Make good use of the available optimizers; if one does not work well, try another.\n");
    } else {
        p.push_str("* The optimizer is fixed to STLSQ with threshold 0.1; any [optimizer] table is ignored.\n");
    }
    p.push_str("*Chain of Thought:*\n");
    let mut steps = vec![
        "Understand the System: review the observation for key components and behaviours.",
        "Select Features: choose libraries and their arguments, and add custom terms for any further primitive functions.",
    ];
    if opt {
        steps.push("Select Optimizer: choose an optimizer and its arguments.");
    }
    steps.push("Build the Library: assemble the selected parts into one candidate.");
    steps.push("Validate and Refine: balance simplicity against accuracy so the model stays interpretable.");
    for (i, s) in steps.iter().enumerate() {
        let _ = writeln!(p, "{}. {s}", i + 1);
    }
    p.push_str("*Example:*\n");
    if opt {
        p.push_str("Define the candidate as a TOML document with [[library]] tables and one [optimizer] table.\n");
    } else {
        p.push_str("Define the candidate as a TOML document with [[library]] tables.\n");
    }
    fenced(&mut p, &example_block(opt));
    p.push_str("*Feature library:*\nThe available feature libraries are documented below. Read the documentation carefully.\n");
    p.push_str(LIBRARY_DOC.trim_end());
    p.push('\n');
    if opt {
        p.push_str("*Optimizer:*\nThe available optimizers are documented below. Read the documentation carefully.\n");
        p.push_str(OPTIMIZER_DOC.trim_end());
        p.push('\n');
    }

    if !examples.is_empty() {
        p.push_str("*Examples:*\nCandidates that worked for systems with similar descriptions:\n");
        for (i, e) in examples.iter().enumerate() {
            let _ = writeln!(p, "Example {}\nDescription: {}", i + 1, e.description.trim());
            fenced(&mut p, &e.config);
        }
    }

    if !attempts.is_empty() {
        p.push_str(
            "*Previous attempts:*\nAnalyze these previous attempts carefully and work out what leads to \
             high R2 scores, particularly on the test data.\n",
        );
        for (i, a) in attempts.iter().enumerate() {
            let s = &a.score;
            let _ = writeln!(
                p,
                "Attempt {} (iteration {}, sample {}): train R2 = {}, test R2 = {}, active terms = {}",
                i + 1,
                a.iteration,
                a.sample,
                sig(s.r2_train, SCORE_DIGITS),
                sig(s.r2_test, SCORE_DIGITS),
                s.active_terms
            );
            match (&a.candidate, &a.response) {
                (Some(c), _) => fenced(&mut p, &c.raw_text),
                (None, Some(r)) if !r.trim().is_empty() => {
                    p.push_str("Response excerpt:\n");
                    p.push_str(&excerpt(r));
                    p.push('\n');
                }
                _ => {}
            }
            if !a.equations.is_empty() {
                p.push_str("Equations:\n");
                for e in &a.equations {
                    let _ = writeln!(p, "  {e}");
                }
            }
            if let Some(err) = &s.error {
                let _ = writeln!(p, "Error: {err}");
            }
            if !a.diagnostics.is_empty() {
                p.push_str("Diagnostics:\n");
                for d in &a.diagnostics {
                    let _ = writeln!(p, "  {}", d.replace('\n', "\n  "));
                }
            }
        }
    }

    if !feedback.is_empty() {
        p.push_str("*Human feedback:*\nA domain expert reviewed earlier attempts and wrote (oldest first):\n");
        for f in feedback {
            let _ = writeln!(p, "- {}", f.trim());
        }
    }

    let ab = &config.ablation;
    let parts: Vec<(&str, &str)> = [
        (ab.text, "**Text description:**", observation.text.as_deref()),
        (ab.data, "**Data description:**", observation.data_summary.as_ref().map(|s| s.text.as_str())),
        (ab.image, "**Image description:**", observation.image_summary.as_ref().map(|s| s.text.as_str())),
    ]
    .into_iter()
    .filter_map(|(on, h, t)| t.filter(|t| on && !t.trim().is_empty()).map(|t| (h, t)))
    .collect();
    if !parts.is_empty() {
        p.push_str("*System observation:*\n");
        for (h, t) in parts {
            let _ = writeln!(p, "{h}\n{}", t.trim());
        }
    }
    p
}
