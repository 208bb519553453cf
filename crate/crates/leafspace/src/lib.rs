//! Solver library for Yamabe-type equations
//!
//! ```text
//!     -Δu + b u = c |u|^(p-2) u        on a closed manifold M
//! ```
//!
//! restricted to functions that are constant along the leaves of a singular
//! Riemannian foliation of M. Such functions live on the leaf space M* = M/F,
//! which for every geometry bundled here is an interval or a circle carrying
//! the pushforward of the Riemannian volume as a weight. The library models
//! that quotient ([`quotient`]), builds Clifford-system foliations whose
//! quotients are estimated by Monte-Carlo pushforward ([`clifford`]), provides
//! the discrete weighted Sobolev calculus ([`discrete`]), the energy
//! functional with its θ-gradient decomposition and Nehari projection
//! ([`energy`]), gradient-flow search drivers for positive and sign-changing
//! solutions ([`flow`]), and independent verification oracles ([`verify`]).

pub mod clifford;
pub mod discrete;
pub mod energy;
mod error;
pub mod flow;
mod linalg;
pub mod quotient;
pub mod verify;

pub use error::{Error, Result};

pub use discrete::{Field, ProblemSpec};
pub use energy::NehariPoint;
pub use flow::{FlowConfig, SignClass, SolutionRecord};
pub use quotient::{EndpointKind, FoliationPreset, PresetId, WeightedDomain};
