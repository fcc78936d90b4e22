//! Binaural audition pipeline: sound source localization and sound detection
//! from two-channel audio.
//!
//! The crate is organized as a chain of small modules:
//!
//! * [`signal`] — framing, Hamming windowing and FFT of stereo PCM streams.
//! * [`wav`] — minimal WAV reader/writer for the formats the pipeline accepts.
//! * [`features`] — per-frequency interaural level/phase features.
//! * [`grid`] — quasi-uniform direction grid on the sphere.
//! * [`hrtf`] — parametric rigid-sphere head-related transfer functions.
//! * [`nn`] — small dense/convolutional networks and the Adam optimizer.
//! * [`ssde`] — per-frequency direction estimation networks.
//! * [`music`] — two-channel MUSIC baseline with HRTF steering vectors.
//! * [`mel`] — mel filterbank and log-mel spectrograms.
//! * [`corpus`] — synthetic labeled sound corpus for the detector.
//! * [`detect`] — CNN sound detector with binaural fusion.
//! * [`eval`] — virtual-source simulation harness and error statistics.
//!
//! All randomized steps take explicit 64-bit seeds and are deterministic:
//! the same seed reproduces bit-identical models and evaluation tables.

mod container;
pub mod corpus;
pub mod detect;
pub mod eval;
pub mod features;
pub mod grid;
pub mod hrtf;
pub mod mel;
pub mod music;
pub mod nn;
pub mod signal;
pub mod ssde;
pub mod wav;
