//! Failure diagnosis for agent runs.
//!
//! A recorded run (JSON Lines spans) is partitioned into signal families,
//! scanned by signal-specific detectors, fused into evidence records,
//! summarized as a structured diagnosis and finally passed through a
//! deterministic gate that decides whether corrective guidance may be
//! injected into the next attempt.
//!
//! ```
//! use failscope::{config::Config, pipeline::run_pipeline, synth::{synthesize, Category}};
//!
//! let trace = synthesize(Category::RetryNoProgress, 7);
//! let report = run_pipeline(&trace, "synthetic", &Config::default(), None).unwrap();
//! assert!(report.dangling_ids().is_empty());
//! ```

pub mod config;
pub mod diagnose;
pub mod fuse;
pub mod gate;
pub mod localize;
pub mod metrics;
pub mod pipeline;
pub mod recorder;
pub mod report;
pub mod synth;
pub mod wire;

mod util;

pub use config::Config;
pub use pipeline::{run_pipeline, PipelineError};
pub use report::Report;
pub use util::stable_hash;
