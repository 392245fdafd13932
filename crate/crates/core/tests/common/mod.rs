#![allow(dead_code)]

pub mod determinism;
pub mod envsim;
pub mod experiment;
pub mod fd;
pub mod oracles;
pub mod routing;
pub mod sweep;
