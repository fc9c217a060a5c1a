//! CTC sequence transduction with windowed attention heads, self-attention,
//! hybrid word/letter OOV replacement and mixed-unit vocabularies.

pub mod attention;
pub mod autodiff;
pub mod ctc;
pub mod error;
pub mod harness;

pub use error::{Error, Result};
pub mod params;
pub mod rnn;
pub mod vocab;
