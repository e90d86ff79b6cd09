use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} = {value} is outside {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("no feasible gas at depth {depth} m")]
    EmptyFeasibleSet { depth: f64 },

    #[error("gas {gas} is not feasible at depth {depth} m")]
    InfeasibleGas { gas: usize, depth: f64 },

    #[error("malformed profile: {0}")]
    Profile(String),

    #[error("no plan satisfies the risk budget {rho} (minimum achievable binned risk {min_binned_risk})")]
    CapInfeasible { rho: f64, min_binned_risk: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("internal invariant violated: {0}")]
    Logic(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that describe an infeasible (rather than malformed) problem.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::EmptyFeasibleSet { .. }
                | Error::InfeasibleGas { .. }
                | Error::CapInfeasible { .. }
                | Error::Infeasible(_)
        )
    }
}
