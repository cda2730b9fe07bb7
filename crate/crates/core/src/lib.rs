#![no_std]

extern crate alloc;

mod error;
pub mod corpus;
pub mod expr;
pub mod flatness;
pub mod fuzz;
pub mod linalg;
pub mod linearize;
pub mod ltv;
pub mod planner;
pub mod system;
pub mod trajectory;
pub mod verify;

pub use error::Error;
