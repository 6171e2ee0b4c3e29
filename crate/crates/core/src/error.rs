use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", unreachable_message(.0))]
    Unreachable(Vec<usize>),

    #[error("network has no nodes")]
    EmptyNetwork,

    #[error("branch {branch} references node {node} outside the network")]
    UnknownNode { branch: usize, node: usize },

    #[error("branch {branch} has zero series impedance")]
    SingularBranch { branch: usize },

    #[error("branch {branch} has negative resistance")]
    NegativeResistance { branch: usize },

    #[error("hour {0} outside 1..=24")]
    HourOutOfRange(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("harmonic admittance matrix for h={harmonic} is singular")]
    SingularHarmonicAdmittance { harmonic: u32 },

    #[error("linearization voltage {index} has magnitude {magnitude:.4} outside (0.5, 1.5) pu")]
    LinearizationPoint { index: usize, magnitude: f64 },

    #[error("power flow did not converge after {iterations} iterations (last update {update:.3e} pu, mismatch {mismatch:.3e} pu)")]
    Divergence {
        iterations: usize,
        update: f64,
        mismatch: f64,
    },

    #[error("second-order cone needs at least one member")]
    DegenerateCone,

    #[error("scenario error: {0}")]
    Schema(String),

    #[error("invalid case name {0:?}; expected e.g. C1.2-")]
    CaseName(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn unreachable_message(nodes: &[usize]) -> String {
    match nodes {
        [one] => format!("node {one} unreachable"),
        many => {
            let list: Vec<String> = many.iter().map(|n| n.to_string()).collect();
            format!("nodes {} unreachable", list.join(", "))
        }
    }
}
