pub mod artifact;
pub mod benchmarks;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod gp;
pub mod imc;
pub mod lvgp;
pub mod optim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussian-processes.md")]
    mod gaussian_processes {}
    #[doc = include_str!("../../../book/src/latent-variables.md")]
    mod latent_variables {}
    #[doc = include_str!("../../../book/src/input-mapping.md")]
    mod input_mapping {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/artifacts.md")]
    mod artifacts {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
