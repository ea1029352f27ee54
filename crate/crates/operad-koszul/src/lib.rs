//! A workbench for computing with quadratic colored operads over the
//! rationals: free operads, quadratic duals, cobar complexes and Koszulness
//! verdicts, cyclic structures and inner-product operads, homotopy-algebra
//! residual checkers, and a chain-level Poincaré duality pipeline on finite
//! simplicial complexes.
//!
//! All linear algebra is exact; every check is a rank or nullspace
//! computation over `BigRational`.

pub mod cobar;
pub mod cyclic;
pub mod homotopy;
pub mod lie;
pub mod linalg;
pub mod operad;
pub mod pd;
pub mod tree;
