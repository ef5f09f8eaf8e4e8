//! Relation-typed attention biases for table-text encoding.
//!
//! A table-text pair is flattened into a token sequence ([`linearize`]),
//! every token pair is assigned one of thirteen structural relation types
//! ([`relations`]), and a small transformer encoder adds one learnable
//! scalar per relation type, head and layer to its attention logits
//! ([`encoder`]). With per-cell positions and no row or column ids the
//! encoder is equivariant under row and column permutations of the table;
//! [`invariance`] checks that property and measures prediction variation.
//! [`toytask`] generates synthetic cell-selection tasks and trains models.

pub mod encoder;
pub mod error;
pub mod invariance;
pub mod io;
pub mod linearize;
pub mod relations;
pub mod rng;
pub mod table;
pub mod toytask;

pub use error::{Error, Result};
