//! HTTP service for reduced-order wind fields and contaminant transport.
//!
//! Endpoints: `GET /health`, `GET /mesh`, `POST /evaluate` and `POST /uq`.
//! [`engine::Engine`] holds the immutable artifacts and is shared with the
//! command-line driver so both produce identical payloads.

pub mod engine;
pub mod payload;
pub mod server;

pub use engine::{Engine, EngineSources, ModelKind, TransportSettings};
pub use payload::{decode_f64, encode_f64, EvaluatePayload, Field, MeshPayload, UqPayload};
pub use server::{router, serve, AppState, ServiceConfig};
