use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two operands of an operation have incompatible shapes.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A grid was declared with a resolution that does not tile its bounding box.
    #[error("grid: {0}")]
    Grid(String),
    /// A point lies outside the domain it must belong to.
    #[error("station {id} lies outside the field bounding box")]
    OutOfDomain { id: String },
    /// A value that must be finite is not.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// A configuration value violates its contract.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A constraint could not be satisfied by the sampler.
    #[error("sampling failed: {0}")]
    Sampling(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
