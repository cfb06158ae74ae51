//! Trainable OCR post-correction: a character noisy-channel model with a
//! character trigram prior, decoded by beam search.

mod align;
mod cer;
mod channel;
mod decode;
mod lm;
mod model;
pub mod synth;

pub use align::{align, EditOp};
pub use cer::{cer, edit_distance, CerError, MicroCer};
pub use channel::{ChannelModel, Sym};
pub use lm::{CharLm, Ctx, Next};
pub use model::{
    evaluate, train, ArtifactError, CountAccumulator, Evaluation, Inventory, PagePair, PostCorrectorModel,
    TrainConfig, TrainError, TrainReport, ARTIFACT_FORMAT,
};
