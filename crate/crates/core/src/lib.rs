//! Unbiased Monte Carlo solution of second-kind linear integral equations.
//!
//! The solver treats equations of the form `x = f + lambda * K[x]` for three
//! kernel families — Volterra (integration up to `t`), Fredholm (integration
//! over `[0,1]^d`), and weakly singular Abel–Volterra — by sampling the
//! Neumann series `x = sum_n lambda^n K^n[f]` at a random truncation depth.
//! Each outer replicate draws a depth from a family-matched law (Poisson,
//! geometric, or discrete Mittag-Leffler), averages a batch of multiplicative
//! path weights over random inner nodes, and the replicate mean is an
//! unbiased estimate of a scaled solution value; a family-specific scale
//! factor recovers the solution itself.
//!
//! Modules:
//!
//! * [`specfun`] — log-gamma, Mittag-Leffler sums, and the other scalar
//!   series the laws and allocators are built from,
//! * [`sampling`] — reproducible RNG streams, truncation-depth laws, and
//!   ordered-simplex samplers (uniform and gap-singular),
//! * [`problem`] — kernel/right-hand-side expressions, problem definitions,
//!   norm reports, and path weights,
//! * [`allocation`] — variance-optimal inner-sample counts under a cost
//!   budget, generic and per family,
//! * [`estimator`] — point and field estimation with confidence intervals
//!   and cost accounting,
//! * [`oracle`] — deterministic reference solves used to verify the
//!   stochastic estimates.

pub mod allocation;
pub mod error;
pub mod estimator;
pub mod oracle;
pub mod problem;
pub mod sampling;
pub mod specfun;

pub use error::{Error, Result};
