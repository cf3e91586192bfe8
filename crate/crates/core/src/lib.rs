//! Event-triggered adaptive controlled islanding.
//!
//! The crate simulates inverter-interfaced distributed generators, watches
//! their residuals with a chi-square trigger, classifies triggered windows
//! with an ensemble of bagged trees and SVMs, and partitions the grid with a
//! mixed-integer program solved by an in-crate branch-and-bound over a
//! bounded dual simplex. Island economics are evaluated by per-island
//! economic dispatch.

pub mod detection;
pub mod dispatch;
pub mod dynamics;
pub mod grid;
pub mod lp;
pub mod pipeline;
pub mod skr;
pub mod islanding;
