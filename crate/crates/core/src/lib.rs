//! Computational tropical geometry: exact fan combinatorics and tropical
//! homology, weighted tropicalizations, superforms, and numerical
//! limits of `-eps log|.|` pullbacks over parametrized chains.

pub mod analytic;
pub mod cycles;
pub mod exact_linalg;
pub mod polyfan;
pub mod quad;
pub mod satrop;
pub mod superform;
pub mod tropcoh;
