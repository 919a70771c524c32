//! Matrix-free space-time finite element solver for the heat and acoustic wave
//! equations, with a geometric space-time multigrid preconditioner.

pub mod driver;
pub mod error;
pub mod krylov;
pub mod stmg;
pub mod quadrature;
pub mod mesh;
pub mod space_fem;
pub mod st_operator;
pub mod time_basis;

pub use error::{Result, StmgError};
