//! Reference computations shared by the integration tests and the
//! acceptance report. None of them call into the code under test.
#![allow(dead_code)]

pub mod cam;
pub mod metrics;
pub mod optim;
