//! Hybrid (switched) control of a half-bridge inverter.
//!
//! The crate models the inverter as an LTI system driven by a binary switch
//! command, tracks a sinusoidal reference produced by a rotating oscillator,
//! and closes the loop with the sign-based switching policy
//! `u = −sign(BᵀPe)` where `P` solves the plant's Lyapunov equation.
//! An optional droop loop retunes the reference amplitude and frequency from
//! measured active and reactive power.

pub mod analysis;
pub mod controller;
pub mod droop;
pub mod engine;
pub mod error;
pub mod numerics;
pub mod plant;
pub mod reference;

pub use error::{Error, Result};
