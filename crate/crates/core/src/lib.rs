//! Annotation-free group robustness by loss-based last-layer retraining.
//!
//! A model `softmax(h ∘ g)` is first trained with ERM. Its correct and
//! misclassified samples on a held-out split stand in for the majority and
//! minority groups; an equal number of low-loss correct and high-loss missed
//! samples per class is selected and the head `h` is retrained on them.
//!
//! Modules:
//! - [`dataspec`]: synthetic spurious-correlation data and the split protocol
//! - [`embio`]: EMB and CSV dataset files
//! - [`nnopt`]: MLP, cross-entropy, backprop, SGD training, checkpoints
//! - [`grouping`]: proxy-group inference and loss-ordered selection
//! - [`retrain`]: loss-based selection, the group oracle, weighted retraining
//! - [`evalmetrics`]: group accuracies and validation-based selection
//! - [`harness`]: experiment cells, sweeps and reports

pub mod dataspec;
pub mod embio;
pub mod evalmetrics;
pub mod grouping;
pub mod harness;
pub mod nnopt;
pub mod retrain;
pub mod seeding;

pub use dataspec::{Alignment, GroupId, GroupedDataset, Samples, SpuriosityConfig, SplitSet};
pub use evalmetrics::{GroupMetrics, Method};
pub use grouping::{GroupPartition, SelectionStrategy};
pub use nnopt::{Model, TrainConfig, Trainable};
