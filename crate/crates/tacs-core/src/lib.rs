//! Traversability-aware scene graph construction for ground robots.
//!
//! The crate builds hierarchical scene graphs (keyframes → walls → rooms)
//! from simulated 2.5D range scans. Rooms are segmented by where the robot
//! can actually travel instead of raw free-space proximity, over-segmented
//! rooms are fused through factor-graph optimization, and loop closures are
//! triggered by room re-detection. A small world simulator with exact ground
//! truth and an evaluation suite (room-count consistency, dice overlap,
//! trajectory error) round out the pipeline.
//!
//! Data-parallel inner loops (occupancy inference, distance transforms,
//! scan-match scoring, multi-seed trials) run on rayon when the default
//! `parallel` feature is enabled and fall back to sequential loops when it
//! is not. `benches/parallel_vs_sequential.rs` compares both paths.

pub mod error;
pub mod factorgraph;
pub mod grid;
pub mod loopclosure;
pub mod metrics;
pub(crate) mod par;
pub mod pipeline;
pub mod roommerge;
pub mod roomseg;
pub mod se2;
pub mod traversability;
pub mod walls;
pub mod worldsim;

pub use error::{Error, Result};
pub use se2::Se2;
