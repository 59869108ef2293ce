//! Free and separability-constrained dynamics of small multipartite quantum
//! systems, with thermodynamic bookkeeping and ready-made benchmark scenarios.

pub mod cli;
pub mod closed;
pub mod error;
pub mod linalg;
pub mod open;
pub mod scenarios;
pub mod stepper;
pub mod tensor;
pub mod thermo;

pub use error::{Error, Result};

/// Version of each module, recorded in run manifests.
pub const MODULE_VERSIONS: [(&str, &str); 6] = [
    ("tensor_core", env!("CARGO_PKG_VERSION")),
    ("closed_dynamics", env!("CARGO_PKG_VERSION")),
    ("open_dynamics", env!("CARGO_PKG_VERSION")),
    ("thermo", env!("CARGO_PKG_VERSION")),
    ("scenarios", env!("CARGO_PKG_VERSION")),
    ("cli", env!("CARGO_PKG_VERSION")),
];

/// Which dynamics a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Free,
    Constrained,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Free => "free",
            Mode::Constrained => "constrained",
        }
    }
}
