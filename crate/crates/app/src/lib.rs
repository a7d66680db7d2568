//! The `loopkit` command-line tool and the annotation service behind the
//! browser UI. Both are thin layers over the `loopkit` library; the
//! propagation path they share lives in [`pipeline`].

pub mod cli;
pub mod pipeline;
pub mod service;
pub mod store;

pub use cli::run;
