//! Pathwise construction of affine processes on `R+^m x R^n` as solutions of a
//! multivariate time-change equation driven by independent Lévy processes, with
//! Riccati-based verification of the affine property.

pub mod cli;
pub mod levy;
pub mod params;
pub mod reduction;
pub mod riccati;
pub mod simulate;
pub mod timechange;
pub mod verify;
