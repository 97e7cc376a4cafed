//! Mutation hook used by `verify --sabotage`.
//!
//! When a fault is armed the matching kernel computes a subtly wrong result,
//! which the oracle checks are expected to catch. Never armed in normal runs.

use std::str::FromStr;
use std::sync::atomic::{AtomicU8, Ordering};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Fault {
    None = 0,
    Matmul = 1,
    Softmax = 2,
    Conv2d = 3,
    Pool = 4,
    Bilinear = 5,
}

static ARMED: AtomicU8 = AtomicU8::new(0);

pub fn arm(fault: Fault) {
    ARMED.store(fault as u8, Ordering::SeqCst);
}

pub fn disarm() {
    arm(Fault::None);
}

#[inline]
pub(crate) fn armed(fault: Fault) -> bool {
    ARMED.load(Ordering::Relaxed) == fault as u8
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => Fault::None,
            "matmul" => Fault::Matmul,
            "softmax" => Fault::Softmax,
            "conv2d" => Fault::Conv2d,
            "pool" => Fault::Pool,
            "bilinear" => Fault::Bilinear,
            other => {
                return Err(Error::Usage(format!(
                    "unknown sabotage target '{other}' (expected matmul, softmax, conv2d, pool or bilinear)"
                )))
            }
        })
    }
}
