use infograph::estimate::EstimateError;
use infograph::exactinfo::InfoError;
use infograph::graphquery::QueryError;
use infograph::model::ModelError;
use infograph::sim::SimError;
use infograph::structure::StructureError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("estimation failed: {message}")]
    Estimation {
        message: String,
        /// Log-likelihood trace of the failing fit, when there is one.
        trace: Vec<f64>,
    },
    #[error("{0}")]
    Capacity(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Estimation { .. } => 3,
            CliError::Capacity(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().display().to_string();
        move |source| CliError::Io { path, source }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::StateSpaceTooLarge { .. } => CliError::Capacity(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        let trace = match &e {
            EstimateError::Diverged { trace, .. } | EstimateError::NotConverged { trace, .. } => {
                trace.clone()
            }
            _ => Vec::new(),
        };
        match e {
            EstimateError::Io(source) => CliError::Io {
                path: "<output>".into(),
                source,
            },
            EstimateError::BadCeiling(_)
            | EstimateError::NotBinary
            | EstimateError::ProcessOutOfRange { .. } => CliError::Usage(e.to_string()),
            other => CliError::Estimation {
                message: other.to_string(),
                trace,
            },
        }
    }
}

impl From<InfoError> for CliError {
    fn from(e: InfoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Model(m) => m.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<StructureError> for CliError {
    fn from(e: StructureError) -> Self {
        match e {
            StructureError::Estimate(e) => e.into(),
            StructureError::Model(e) => e.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}
