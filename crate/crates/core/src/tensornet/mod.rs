//! Matrix product state backend: MPS container, the long-range Rydberg MPO,
//! multi-site Trotterized time evolution, and finite-size DMRG.

pub mod dmrg;
pub mod linalg;
pub mod mpo;
pub mod mps;
pub mod tebd;

pub use mpo::Mpo;
pub use mps::Mps;
