//! Quantum-kernel SVM engine.

pub mod dataset;
pub mod distill;
pub mod eval;
pub mod featuremap;
pub mod kernel;
mod linalg;
pub mod reduce;
pub mod statevector;
pub mod svm;
pub mod tensornet;
