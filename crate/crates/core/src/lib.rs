// `!(a <= b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birth_death;
pub mod error;
pub mod index;
pub mod model;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
