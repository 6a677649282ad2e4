pub mod error;
pub mod loadfn;
pub mod matrix;
pub mod model;
pub mod flow;
pub mod central;
pub mod gossip;
pub mod io;
pub mod oracle;
pub mod synth;
mod minimize;

pub use error::{Error, Result};
pub use matrix::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/load-functions.md")]
    mod load_functions {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/central.md")]
    mod central {}
    #[doc = include_str!("../../../book/src/gossip.md")]
    mod gossip {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
