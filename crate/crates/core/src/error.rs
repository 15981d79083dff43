use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Some sampling time does not follow the release time it depends on,
    /// or a time falls outside the slot.
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    /// Zero-forcing is impossible because desired and interference
    /// directions are (numerically) parallel.
    #[error("alignment degenerate at Rx{rx}: {detail}")]
    AlignmentDegenerate { rx: usize, detail: String },

    #[error("invalid reaction coefficient: {0}")]
    InvalidReactionCoefficient(String),

    #[error("point outside feasible region: {0}")]
    InfeasiblePoint(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular channel: {0}")]
    SingularChannel(String),

    #[error("empty feasible region: {0}")]
    EmptyRegion(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by the inputs being physically or
    /// geometrically infeasible, as opposed to malformed or internal ones.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InvalidScenario(_)
                | Error::InfeasibleSchedule(_)
                | Error::Domain(_)
                | Error::DegenerateChannel(_)
                | Error::AlignmentDegenerate { .. }
                | Error::InvalidReactionCoefficient(_)
                | Error::InfeasiblePoint(_)
                | Error::Precondition(_)
                | Error::SingularChannel(_)
                | Error::EmptyRegion(_)
        )
    }
}
