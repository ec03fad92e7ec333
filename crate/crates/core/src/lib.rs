//! Minimum-description-length probing of layer-wise representations.
//!
//! Measures how much information about a label (for instance a gender
//! attribute) each layer of an encoder exposes, using online code length
//! under a shallow probe, and compares trained, random-weight, debiased and
//! fine-tuned profiles.

pub mod analysis;
pub mod error;
pub mod io;
pub mod mdl;
pub mod probe;
pub mod types;

pub use analysis::{
    bias_verdict, compare_profiles, debias_effectiveness, layer_profile, layer_profile_parallel, ComparisonTable,
};
pub use error::{Error, Result};
pub use mdl::{compression, make_schedule, ScheduleSpec, online_code_length, uniform_code_length};
pub use probe::{cross_entropy_bits, init_probe, predict_log_probs, train_probe, ProbeModel};
pub use types::{
    validate_embeddings, Architecture, BlockSchedule, CodeLengthReport, DatasetRecord, InitScheme, LabeledEmbeddings,
    LayerProfile, ProbeConfig, VerdictReport, VerdictRule,
};
