//! Auxiliary-line geometry reasoning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`scene`]: symbolic diagrams and the diagram delta.
//! - [`dsl`]: the construction language and `[AUX]` span handling.
//! - [`oracle`]: consistency judge, answer reward and composite reward.
//! - [`perturb`]: rule-based negatives and supervision triplets.
//! - [`env`]: synthetic tasks and the tabular softmax policy.
//! - [`grpo`]: supervised warm start and group-relative policy optimization.
//! - [`eval`]: Pass@k and the Easy/Hard report.
//! - [`corpus`]: the fixture-corpus ingestion pipeline.

pub mod corpus;
pub mod dsl;
pub mod env;
pub mod eval;
pub mod grpo;
pub mod oracle;
pub mod perturb;
pub mod report;
pub mod scene;
pub mod seed;
