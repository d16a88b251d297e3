//! Open-target stance detection harness.
//!
//! Generates stance targets and stances from raw texts through chat-model
//! endpoints, then scores target quality and stance accuracy.

pub mod corpus;
pub mod gateway;
pub mod parsing;
pub mod prompting;
pub mod pipeline;
pub mod metrics;
pub mod humaneval;
pub mod report;
pub mod config;
