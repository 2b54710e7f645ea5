//! Clock-synchronized relative navigation for multi-robot teams ranging over
//! ultra-wideband radios, with on-manifold filtering on SE_2(3).

pub mod clocks;
pub mod estimator;
pub mod eval;
pub mod lie;
pub mod motion;
pub mod oracle;
pub mod preint;
pub mod ranging;
pub mod selftest;
