#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod consensus;
pub mod controller;
pub mod eigen;
pub mod error;
pub mod flbench;
pub mod graph;
pub mod nn;
pub mod planner;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::Graph;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/planner.md")]
    mod planner {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/controller.md")]
    mod controller {}
    #[doc = include_str!("../../../book/src/flbench.md")]
    mod flbench {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
