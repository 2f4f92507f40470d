#![allow(dead_code)]

pub mod oracles;
pub mod protocol;
pub mod kb;
pub mod text_oracles;
