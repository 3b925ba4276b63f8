#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Desk-scale simulator of an event-driven spiking neural network accelerator.
//!
//! The crate covers the whole path from event-camera streams to latency and
//! energy figures:
//!
//! - [`fixedpoint`]: Qm,n saturating arithmetic
//! - [`model`]: network description, shape inference, accounting, BN fusion, model files
//! - [`neuron`]: IF/LIF dynamics with hard reset
//! - [`events`]: event parsing, windowing and frame accumulation
//! - [`engine`]: dense reference engine and the event-driven NPU pipeline
//! - [`perf`]: discrete-event latency simulation and energy metrics
//! - [`serve`]: the frame streaming protocol, server and client

pub mod engine;
pub mod events;
pub mod fixedpoint;
pub mod model;
pub mod neuron;
pub mod perf;
pub mod presets;
pub mod serve;
