// Float routines that `core` does not provide on stable.
pub(crate) use libm::{ceil, cos, exp, expm1, log, pow, sqrt};
