//! Desk-scale humanoid vision-language-action pipeline.
//!
//! - [`actions`]: joint/task-space action types, normalization, rotations, resampling, datasets
//! - [`fasttok`]: quantize + byte-pair-encode action tokenizer
//! - [`flow`]: flow-matching action expert (MM-DiT and single-stream DiT), pretraining head, training
//! - [`rtc`]: real-time chunking, both the training mask and the asynchronous scheduler
//! - [`plant`]: kinematic humanoid stand-in, demonstration generator and rollout evaluation

pub mod actions;
pub mod fasttok;
pub mod flow;
pub mod plant;
pub mod rtc;
