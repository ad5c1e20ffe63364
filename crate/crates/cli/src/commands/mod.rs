//! One module per subcommand. Each exposes a `run` function taking its
//! configuration, so commands can also be driven from tests.

pub mod covis;
pub mod eval;
pub mod fit_basis;
pub mod matrix_model;
pub mod refine;
pub mod synth;
