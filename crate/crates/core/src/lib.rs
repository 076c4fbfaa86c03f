//! Packet-trace binning, ARIMA and GRU traffic forecasting, burst prediction
//! and application classification.

pub mod arima;
pub mod burst;
pub mod classify;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod rnn;
pub mod synth;
