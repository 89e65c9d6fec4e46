use thiserror::Error;

pub type Result<T> = std::result::Result<T, VmemError>;

#[derive(Debug, Error)]
pub enum VmemError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Conditional mean left the positive orthant. `index` is 0-based in time.
    #[error("non-positive conditional mean at t = {index}")]
    NonPositiveMean { index: usize },

    #[error("overflow evaluating mixture mean for component {component}")]
    Overflow { component: usize },

    #[error("cluster {cluster}: {source}")]
    Cluster {
        cluster: usize,
        #[source]
        source: Box<VmemError>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<VmemError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VmemError {
    /// Wrap with a module-qualified context string.
    pub fn context(self, context: impl Into<String>) -> Self {
        VmemError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
