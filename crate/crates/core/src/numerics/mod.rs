//! Dense linear algebra, a reverse-mode tape, Transformer blocks and the
//! parameter container. Everything is 64-bit and deterministic.

pub mod gradcheck;
mod matrix;
pub mod nn;
pub mod ops;
mod params;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_filtered, GradCheckReport};
pub use matrix::{dot, norm, Matrix, TokenMatrix};
pub use ops::{cosine_similarity, layer_norm_rows, sigmoid, sinusoidal_pe, softmax};
pub use params::{Param, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Gradients, Tape, Var};
