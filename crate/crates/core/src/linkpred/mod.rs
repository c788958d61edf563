//! TransE and RotatE link predictors trained with a margin ranking loss and
//! a monotone schedule for mixing in augmented triples.

mod model;
mod negative;
mod schedule;
mod train;

pub use model::{EmbeddingModel, NormOrder, ScoreGrad, Variant};
pub use negative::negative_sample;
pub use schedule::schedule_size;
pub use train::{train, TrainConfig, TrainHistory};
