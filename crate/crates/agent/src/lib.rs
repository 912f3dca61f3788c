//! Language-model agent that proposes SINDy candidates, scores them and
//! refines them by reflection, retrieval and human feedback.

// Negated comparisons reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod llm;
pub mod orchestrator;
pub mod rag;
pub mod summarize;
