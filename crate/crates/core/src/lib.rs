//! Text de-rendering: recover editable text rendering parameters (placement,
//! font, fill/border/shadow effects, colours, background) from raster images
//! by gradient-based refinement over a differentiable reconstruction, and
//! re-render the recovered documents at any resolution.

pub mod atlas;
pub mod compositor;
pub mod datagen;
pub mod decompose;
pub mod diffrender;
pub mod error;
pub mod export;
pub mod imaging;
pub mod initialize;
pub mod refine;
pub mod suite;

pub use error::{Error, Result};
