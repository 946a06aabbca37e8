//! Toolkit for building coverage-conditioned (C²) query datasets on top of
//! hierarchical query trees, and for running outline-conditioned
//! retrieval-augmented generation over them.
//!
//! The pipeline works on a fixed vocabulary of structures:
//!
//! * [`qtree::QTree`] - a 3-deep, 3-wide tree of 39 subqueries decomposing
//!   one base query; deeper nodes are more specific.
//! * [`outline::Outline`] - exactly four connected-or-neighboring tree nodes,
//!   used both as search queries and as a content draft.
//! * [`c2::C2Query`] - a base query concatenated with a coverage query that
//!   asks to include or exclude the subtopic of a *background subquery*.
//! * [`judge::JudgedOutline`] - an outline scored 1-5 against a C² query by
//!   an LLM judge.
//! * [`pairs`] - SFT and DPO training-set export built from judged outlines.
//! * [`rag`] - document budgeting, associative evidence selection, and
//!   grounded response generation.
//! * [`stats`] - evaluation statistics (mean/SD, pairwise, exact McNemar,
//!   Pearson r) and the Markdown report.
//!
//! All LLM traffic goes through [`gateway::Gateway`], which journals
//! request/response pairs so any run can be replayed offline.

pub mod c2;
pub mod gateway;
pub mod judge;
pub mod outline;
pub mod pairs;
pub mod qtree;
pub mod rag;
pub mod stats;
pub mod text;
