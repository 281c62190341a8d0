//! Grid case files, DC power flow, and the linearized interconnected model.
//!
//! Every bus is either a generator (swing dynamics plus governor) or an
//! aggregate dynamic load, so the network sparsity is preserved and load-side
//! channels exist for disturbances. The linearization couples buses through
//! the lossless network with branch weights evaluated at the DC operating
//! point, which is what makes the model (and everything derived from it)
//! depend on the current loading.

mod case;
mod linearize;
mod parse;
mod powerflow;

pub use case::{Branch, Bus, BusKind, Generator, GridCase, Load};
pub use linearize::{linearize, select_outputs, LinearModel, StateBlock};
pub use parse::{parse_case, parse_case_str, serialize_case};
pub use powerflow::{dc_power_flow, OperatingPoint};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("network admittance matrix is singular (disconnected grid?)")]
    SingularNetwork,

    #[error("infeasible dispatch: demand {demand} exceeds total capacity {capacity}")]
    InfeasibleDispatch { demand: f64, capacity: f64 },

    #[error("unknown state label `{0}`")]
    UnknownStateLabel(String),

    #[error(transparent)]
    Mat(#[from] crate::matcore::MatError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::textio::TextError> for ModelError {
    fn from(e: crate::textio::TextError) -> Self {
        ModelError::Parse { line: e.line, message: e.message }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[cfg(test)]
mod rts_tests {
    use super::*;

    fn rts_path() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("cases/rts24.case")
    }

    #[test]
    fn rts24_parses_and_linearizes() {
        let case = parse_case(rts_path()).unwrap();
        assert_eq!(case.n_gens(), 10);
        assert_eq!(case.n_loads(), 14);
        let op = dc_power_flow(&case, &case.nominal_demand(), "nominal").unwrap();
        println!("angle spread: {:.4} rad", op.angle_spread());
        assert!(op.angle_spread() < 0.6, "angle spread {}", op.angle_spread());
        let model = linearize(&case, &op).unwrap();
        assert_eq!(model.n, 68);
        println!("zero eig: {:e}", model.semistability.zero_eigenvalue);
        println!("max stable re: {:e}", model.semistability.max_stable_re());
        println!("vmax on PG block: {:?}", &model.semistability.v_max.to_vec()[24..34]);
    }
}
