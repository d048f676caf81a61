//! Sequential finite-error membership tests for countable sets of means.

pub mod diagnostics;
pub mod enumeration;
pub mod harness;
pub mod identifier;
pub mod limit;
pub mod machine;
pub mod membership;
pub mod par;
pub mod precise;
pub mod rational;
pub mod reals;
pub mod streams;
pub mod tolerance;

pub use enumeration::{enumerate, index_of};
pub use rational::Rational;
