//! Harmonization of targeted hate speech corpora into a unified target-group
//! taxonomy, plus the catalog, sampling and statistics needed to run
//! persona-conditioned detection experiments on top of it.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`taxonomy`]: categories and target groups, named and versioned.
//! - [`mapping`]: per-dataset raw keyword to target translation tables.
//! - [`ingest`]: raw file loading, keyword resolution, instance splitting and
//!   deduplication.
//! - [`catalog`]: per-dataset, per-category overview with union totals.
//! - [`assembly`]: target and category datasets, availability reports and
//!   balanced seeded sampling.
//! - [`stats`]: detection rates, odds ratios, Fisher exact test, Holm
//!   adjustment and report rendering.
//! - [`store`]: the on-disk resources directory holding all named documents.

pub mod assembly;
pub mod catalog;
pub mod experiment;
pub mod ingest;
pub mod latex;
pub mod mapping;
pub mod rng;
pub mod stats;
pub mod store;
pub mod taxonomy;

pub use assembly::{BalancedSample, SampleManifest};
pub use catalog::Overview;
pub use experiment::{ClassificationRecord, PersonaSpec, Side};
pub use ingest::{DatasetDescriptor, UnifiedInstance};
pub use mapping::{MappingTable, Resolution};
pub use store::ResourceStore;
pub use taxonomy::{TargetGroup, Taxonomy};
