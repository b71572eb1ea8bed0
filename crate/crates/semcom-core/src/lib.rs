//! Multi-user semantic communication experiment kit.
//!
//! Four users each observe one quadrant of a CIFAR-10 image, encode it into a
//! power-constrained real codeword, and transmit over independent AWGN
//! channels to a central receiver that simultaneously classifies the image
//! and reconstructs it. Training minimizes a convex combination of a
//! reconstruction loss (itself a convex combination of MSE and 1-SSIM,
//! weighted by `beta`) and the classification cross-entropy, weighted by
//! `alpha`, with gradients flowing end to end through the channel.
//!
//! Modules:
//! - [`data`]: dataset ingestion and per-user quadrant partitioning
//! - [`channel`]: power normalization and the multi-user AWGN channel
//! - [`nn`]: the minimal neural-network machinery (layers, blocks, Adam)
//! - [`models`]: per-user encoders and the two decoders
//! - [`objective`]: MSE / SSIM / cross-entropy losses and their weighting
//! - [`prob_semantics`]: the decoder densities behind the losses, with
//!   Monte-Carlo and grid oracles
//! - [`training`]: the two-phase schedule, checkpointing, and the sweep
//! - [`evaluation`]: accuracy / PSNR / SSIM metrics and results persistence
//! - [`config`]: the flat experiment config file
//! - [`verify`]: the dataset-free property suite behind `semcom verify`

pub mod channel;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod objective;
pub mod prob_semantics;
pub mod rng;
pub mod training;
pub mod verify;

pub use channel::{ChannelCodeword, ChannelConfig, ReceivedSignal};
pub use config::ExperimentConfig;
pub use data::{Dataset, ImageBatch, Split, UserObservation};
pub use error::{Error, Result};
pub use evaluation::MetricsRecord;
pub use models::SystemModel;
pub use objective::{Images, LossWeights, SsimConfig};
pub use training::{Checkpoint, TrainConfig, Trainer};
