//! Parameter repair for robot state machines.
//!
//! A robot state machine's transition function is written in a small DSL
//! ([`lang`]). Executions are recorded as [`trace`]s; a user marks a handful of
//! steps where the machine should (or should not) have switched state
//! ([`corrections`]). Each correction is specialized against its trace element
//! by partial evaluation ([`residual`]) and the whole set is turned into a
//! weighted MaxSMT problem over additive parameter adjustments ([`repair`]).

pub mod corrections;
pub mod lang;
pub mod residual;
pub mod repair;
pub mod trace;

pub use lang::{
    eval_transition, parse_transition, Bindings, Expr, Label, ParameterMap, Shape, Stmt,
    TransitionFn, Value,
};
