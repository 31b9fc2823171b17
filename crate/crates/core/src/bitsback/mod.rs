//! Partial bits-back coding of the Gaussian set and its rate accounting.
//!
//! Experimental: this mode trades encode/decode speed for rate.

mod coding;
mod plan;
mod rans;

pub use coding::{bb_decode, bb_encode, bb_encode_with_k, plain_ans_len};
pub use plan::{k_suffices, log2_factorial, rate_saving_bound, realized_saving, select_k, BbPlan};
pub use rans::{Rans64, PRECISION, RANS_L};
