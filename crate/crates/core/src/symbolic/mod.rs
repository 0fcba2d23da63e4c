//! Exact symbolic scalars: polynomials, canonical quotients, parsing and evaluation.

pub mod chart;
pub mod compile;
pub mod expr;
pub mod gcd;
pub mod linalg;
pub mod parse;
pub mod poly;
pub mod symbol;
pub mod zero;

pub use chart::{ChartSpec, NumericPoint, ParamSpec};
pub use compile::{Compiled, CompiledVec};
pub use expr::Expr;
pub use parse::{parse_expr, parse_lagrangian, parse_system, SystemSource};
pub use poly::{Coef, Monomial, Poly, Var};
pub use symbol::{Symbol, UnknownKind};
pub use zero::{is_zero, SamplingPolicy, ZeroVerdict, DEFAULT_SEED};
