#![allow(dead_code)]

pub mod ladder;
pub mod oracles;
