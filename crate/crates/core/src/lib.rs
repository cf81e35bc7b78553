#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ad;
pub mod config;
pub mod controller;
pub mod error;
pub mod evaluation;
pub mod integrate;
pub mod observability;
pub mod optimizer;
pub mod pipeline;
pub mod quadrotor;
pub mod scalarization;
pub mod seeding;
pub mod sensitivity;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
