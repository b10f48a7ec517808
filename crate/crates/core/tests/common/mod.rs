#![allow(dead_code)]

pub mod losses;
pub mod metrics;
