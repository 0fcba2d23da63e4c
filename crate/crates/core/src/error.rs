use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no value bound for symbol `{0}`")]
    MissingSymbol(String),
    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
    #[error("denominator vanishes")]
    Pole,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("invalid system at {line}:{col}: {msg}")]
    Semantic { line: usize, col: usize, msg: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("Hessian is singular; run the constraint algorithm instead")]
    SingularHessian,
    #[error("Legendre map cannot be inverted symbolically: {0}")]
    NotInvertible(String),
    #[error("inconsistent constraints: {0}")]
    Inconsistent(String),
    #[error("no points found on the constraint surface: {0}")]
    Sampling(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
