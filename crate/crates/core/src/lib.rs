//! Session-based next-item recommendation with continuous-time latent item
//! states.
//!
//! A session prefix becomes a temporal graph whose transition edges carry the
//! (normalized) time they appeared. A gated graph network infers initial item
//! states, a graph-nested GRU ODE evolves them over the session timeline while
//! edges switch on as their timestamps pass, and an attention readout scores
//! the whole catalog.

pub mod encoder;
pub mod error;
pub mod model;
pub mod numeric;
pub mod ode;
pub mod pipeline;
pub mod readout;
pub mod session;

pub use error::{Error, Result};
