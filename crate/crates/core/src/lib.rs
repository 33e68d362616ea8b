//! Adiabatic vacuum states of a free Klein–Gordon field on Robertson–Walker
//! backgrounds: frequency iteration, mode integration, two-point data and
//! diagnostics for the smoothness/positivity conditions of the iteration.

pub mod adiabatic;
pub mod cli;
pub mod cosmology;
pub mod jets;
pub mod modes;
pub mod probe;
