//! Passivity-based decentralized controller synthesis for networked LTI
//! systems, with an inverse-optimal cost interpretation, certificate
//! verification, and time-domain simulation.
#![allow(non_snake_case)]

pub mod cli;
pub mod config;
pub mod error;
pub mod linsys;
pub mod mats;
pub mod microgrid;
pub mod netgraph;
pub mod plot;
pub mod sdp;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
