//! Nationality-bias auditing for frozen language-model embeddings.
//!
//! A sentiment head is trained on embeddings of bias-free template sentences,
//! then used to score minimal pairs that differ only in a nationality slot.
//! Per-nationality differences against a masked baseline are tested with a
//! Wilcoxon signed-rank test and can be correlated with how positively a
//! pretraining corpus talks about each nationality.

pub mod classifier;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod lexica;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod text;
pub mod workflow;

pub use classifier::{ClassifierKind, Hyperparams, SentimentModel, TrainReport};
pub use config::{AuditConfig, ProbeSource};
pub use corpus::{CorpusStats, SentenceScorer};
pub use embedding::{BackendKind, BackendSpec, EmbeddingVector, Encoder};
pub use error::{Error, Result};
pub use lexica::{LexiconEntry, LexiconKind, ProbeGroup, Slot, Template, TemplateSource, TrainingInstance};
pub use pipeline::{BiasClass, NationalityResult, PairedDiff, RobustnessCell, RobustnessMatrix};
pub use stats::{BootstrapCi, PearsonResult, WilcoxonResult};
