//! Feedback-driven program repair: corpus ingestion, an LLM gateway with a
//! scripted backend, the reflection / test-design / programmer agents, a
//! sandboxed executor, the repair loop and run analytics.

pub mod bench_ingest;
pub mod executor;
pub mod llm_gateway;
pub mod agents;
pub mod repair_loop;
pub mod evaluation;
