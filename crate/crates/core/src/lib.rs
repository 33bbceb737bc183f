//! Realized-volatility forecasting.
//!
//! The numerical building blocks are generic over the floating-point type
//! (see [`Scalar`]); the aliases below fix it to `f64`, which is what the
//! forecasting harness and the command line use.

// `!(x > 0.0)` is used on purpose so that NaN fails the test, and the
// index loops follow the matrix algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ale;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod harness;
pub mod linalg;
pub mod linear;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod realized;
pub mod risk;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod timeseries;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMatrix = timeseries::FeatureMatrix<f64>;
pub type RealizedDay = realized::RealizedDay<f64>;
pub type LagSet = realized::LagSet<f64>;
pub type LinearFit = linear::LinearFit<f64>;
pub type Gram = linear::Gram<f64>;
pub type RegressionTree = tree::RegressionTree<f64>;
pub type TreeData = tree::TreeData<f64>;
pub type TreeEnsemble = tree::TreeEnsemble<f64>;
pub type Network = nn::Network<f64>;
pub type NnData = nn::NnData<f64>;
pub type TrainedNetwork = nn::TrainedNetwork<f64>;
pub type SeedEnsemble = nn::SeedEnsemble<f64>;
