//! Seeded-fault switches used to check that `verify` catches regressions.
//!
//! A fault is process-global and only ever set by the `verify
//! --inject-fault` path of the command-line tool. Library callers never
//! need this module.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None = 0,
    /// Negates the anchor-aligned gradient.
    SignFlip = 1,
    /// Off-by-one step sizes: sigma_i = i / (T + 1).
    WrongSchedule = 2,
    /// Noise drawn from one process-wide sequential generator instead of
    /// being derived from its key.
    SharedRng = 3,
}

impl Fault {
    pub fn parse(name: &str) -> Option<Fault> {
        match name {
            "none" => Some(Fault::None),
            "sign-flip" => Some(Fault::SignFlip),
            "wrong-schedule" => Some(Fault::WrongSchedule),
            "shared-rng" => Some(Fault::SharedRng),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fault::None => "none",
            Fault::SignFlip => "sign-flip",
            Fault::WrongSchedule => "wrong-schedule",
            Fault::SharedRng => "shared-rng",
        }
    }
}

static ACTIVE: AtomicU8 = AtomicU8::new(0);

pub fn inject(fault: Fault) {
    ACTIVE.store(fault as u8, Ordering::SeqCst);
}

#[inline]
pub(crate) fn is_active(fault: Fault) -> bool {
    ACTIVE.load(Ordering::Relaxed) == fault as u8
}
