//! `cfx` transduces regular continued fractions under integer Möbius
//! maps, exactly.
//!
//! Given a nonsingular integer matrix `M = (a, b; c, d)` and the
//! continued fraction expansion of `x`, the crate computes the expansion
//! of `Mx = (ax + b)/(cx + d)` digit by digit, never leaving integer
//! arithmetic. The machinery around the core transducer analyses its
//! finite state set: the transition graph and its closed components, a
//! Markov approximation of the digit dynamics, trigger strings that
//! explain every output pattern, and an exact interval oracle that
//! certifies emitted digits.
//!
//! ```
//! use cfx::cf::{CFString, Digit};
//! use cfx::mat::Mat2;
//! use cfx::transducer::run;
//!
//! // Doubling [0;2,3] = 3/7 emits the expansion of 6/7 = [0;1,6].
//! let m = Mat2::new(2, 0, 0, 1);
//! let input = CFString::proper(vec![2, 3]).unwrap();
//! let (out, state) = run(&m, &input).unwrap();
//! assert_eq!(out, CFString::proper(vec![1, 6]).unwrap());
//! assert_eq!(state, Mat2::new(2, 0, 0, 1));
//! let _ = Digit::new(3).unwrap();
//! ```

pub mod cf;
pub mod error;
pub mod graph;
pub mod lab;
pub mod mat;
pub mod oracle;
pub mod states;
pub mod stream;
pub mod transducer;
pub mod triggers;

pub use error::{CfError, Result};
