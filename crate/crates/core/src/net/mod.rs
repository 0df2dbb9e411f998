//! DeepCAM: household-conditioned schedule generation.

pub mod batch;
pub mod generate;
pub mod loss;
pub mod model;
pub mod params;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;

pub use batch::{build_samples, Batch, HouseholdSample, FEATURE_DIM};
pub use generate::{generate_household, household_rng, teacher_forced_logits, Decoder, SamplingOptions};
pub use loss::{loss_and_grad, LossParts};
pub use model::{constrain_logits, forward, role_probabilities, Forward};
pub use params::{schema_hash, Checkpoint, ModelConfig, ParamStore, CHECKPOINT_FORMAT};
pub use seed::SeedChainModel;
pub use train::{evaluate, loss_and_param_grads, split_indices, train, EpochLog, Split, TrainOutput, TrainSettings};
