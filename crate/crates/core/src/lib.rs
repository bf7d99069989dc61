//! Part-aware vector sketching.
//!
//! Sketches are sequences of cubic Bézier strokes written in a compact text
//! form (`M x y C x1 y1 x2 y2 x3 y3`, one stroke per line). This crate
//! provides the stroke format and SVG subset, a deterministic rasterizer,
//! the part-annotated record model with permutation augmentation, a staged
//! VLM annotation pipeline, step-wise rewards, a multi-turn process-reward
//! GRPO engine with a small tabular policy, and an interactive session model.

pub mod annopipe;
pub mod grpo;
pub mod partdata;
pub mod raster;
pub mod rewards;
pub mod session;
pub mod stroke;

pub use stroke::{CanvasConfig, CubicStroke, Point, Sketch, StrokeSequence};
