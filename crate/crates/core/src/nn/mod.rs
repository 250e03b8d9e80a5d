//! A small CNN over `[antenna, frequency, time]` amplitude images.
//!
//! conv 3x3 (pad 1) -> ReLU -> maxpool 2 -> conv 3x3 -> ReLU -> maxpool 2 ->
//! dense -> softmax, with explicit backward passes and a seeded training
//! loop.

pub mod layers;
pub mod model;
pub mod train;

pub use layers::{loss, softmax};
pub use model::{Architecture, ModelParams, CLASSES, MODEL_MAGIC};
pub use train::{
    argmax, evaluate, forward, forward_input, gradients, predict, stratified_split, train, train_from,
    BatchGradient, ConfusionMatrix, EvalReport, Example, GroupAccuracy, GroupBy, Optimizer, TrainConfig,
    TrainReport, DEFAULT_TEST_FRACTION,
};
