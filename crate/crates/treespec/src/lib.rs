//! Numerical laboratory for width-weighted Schrodinger operators on regular
//! rooted metric trees and for the Laplacian on their thin planar inflations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod connector;
pub mod eigen;
pub mod error;
pub mod fem2d;
pub mod inflated;
pub mod lab;
pub mod mesh;
pub mod operator1d;
pub mod scalar;
pub mod sparse;
pub mod system;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TreeSpec64 = tree::TreeSpec<f64>;
pub type TreeSpec32 = tree::TreeSpec<f32>;
pub type Tree64 = tree::Tree<f64>;
pub type Tree32 = tree::Tree<f32>;
