//! Open-system dynamics: dense Lindblad integration and the Monte Carlo
//! wavefunction unraveling, free or constrained to product states.

mod ensemble;
mod lindblad;
mod mcwf;
mod model;

pub use ensemble::*;
pub use lindblad::*;
pub use mcwf::*;
pub use model::*;
