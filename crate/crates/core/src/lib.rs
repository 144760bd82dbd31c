//! Speaker height and age regression with an LSTM encoder and attention
//! across both frames and encoder units.

pub mod analysis;
pub mod corpus;
pub mod data;
pub mod datagen;
pub mod dropout;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
