//! Prototype-grounded semi-interpretable text classification: sub-sentences
//! are embedded, routed to learnable prototypes, and aggregated through the
//! sentence/document hierarchy, so every prediction can cite the training
//! snippets behind it.

pub mod attention;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod hierarchy;
pub mod imdb;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod prototypes;
pub mod training;

pub use error::{Error, Result};
