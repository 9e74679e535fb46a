use hybrid_ems::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 solver, 4 invariant.
    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "usage" | "config" => 2,
            "invariant" => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        let CliError::Core(e) = self else { return "usage" };
        match e {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::InvalidParams(_)
            | Error::InfeasibleClimb { .. }
            | Error::Coverage { .. } => "config",
            Error::Invariant(_) | Error::Dimension(_) | Error::Precondition(_) | Error::Monotonicity { .. } => {
                "invariant"
            }
            Error::Domain { .. }
            | Error::NoSolution { .. }
            | Error::InfeasibleBounds { .. }
            | Error::Infeasible(_)
            | Error::Budget { .. }
            | Error::Solver { .. }
            | Error::DemandInfeasible { .. } => "solver",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
