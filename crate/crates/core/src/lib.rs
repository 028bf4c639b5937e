//! Counting solutions of `a_1 x_1/y_1 + ... + a_n x_n/y_n = a_0` over `F_p`
//! with `(x_j, y_j)` restricted to intervals, convex regions, disks, or
//! blow-ups `pΩ` of well-shaped sets, together with the exponential sums
//! that control the error terms.
//!
//! The crate is organised bottom-up:
//!
//! - [`fpcore`]: prime-field arithmetic, additive characters, small
//!   arithmetic helpers.
//! - [`geometry`]: integer regions and lattice-point counts.
//! - [`expsums`]: double ratio sums, short Kloosterman sums, second moments.
//! - [`counting`]: brute-force and character-sum counters for `N(a; S)`.
//! - [`wellshaped`]: shifted dyadic cube decompositions of sets in
//!   `[0,1]^{2n}` and blow-up counting.
//! - [`harness`]: sweeps, CSV output, exponent fitting and the verification
//!   suite behind the `ratiocong` binary.

pub mod accum;
pub mod counting;
pub mod error;
pub mod expsums;
pub mod fpcore;
pub mod geometry;
pub mod harness;
pub mod wellshaped;

pub use error::{Error, Result};
pub use fpcore::PrimeContext;
