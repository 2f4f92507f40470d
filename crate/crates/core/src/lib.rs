//! Building blocks of a multi-expert financial assistant: calculation tools,
//! in-stream tool calls, expert routing, generation backends, retrieval,
//! instruction-data construction and evaluation.

pub mod backend;
pub mod dialogue;
pub mod evalkit;
pub mod factory;
pub mod fintools;
pub mod knowledge;
pub mod router;
pub mod toolcall;
pub mod turn;
