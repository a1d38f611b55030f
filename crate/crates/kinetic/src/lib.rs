pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod hypocoercivity;
pub mod boundary;
pub mod collision;
pub mod linalg;
pub mod numerics;
pub mod sampling;
pub mod steady;
pub mod transport;
pub mod velocity_space;

pub use error::{KineticError, Result};
