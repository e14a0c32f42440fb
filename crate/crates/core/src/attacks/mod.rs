//! The exploit toolkit, in the order an attacker uses it: shuffle the
//! keysector, scan for a useful wrong-key branch, capture the OTP hash,
//! then brute-force a branch key and install a persistent payload.

mod bruteforce;
mod nonce;
mod persist;
mod scan;
mod shuffle;
mod stage1;

pub use bruteforce::{
    bruteforce_branch_key, candidate_key, wrong_key_entry_word, BruteforceConfig, BruteforceResult,
    DEFAULT_MAX_TRIALS,
};
pub use nonce::{expected_trials, find_vulnerable_nonce, NonceQuery, NonceSearch};
pub use persist::{install_persistence, keysector_recrypt, PersistPlan, DEFAULT_GAP, PERSIST_HOOK};
pub use scan::{scan_black_box, scan_harness, ScanHit, ScanReport, TargetUsability};
pub use shuffle::{shuffle_keysector, ShufflePlan};
pub use stage1::{capture_otp_hash, Stage1Capture, Stage1Options, STAGE1_HOOK};

use std::ops::Range;

use thiserror::Error;

use crate::bootchain::BootOutcome;
use crate::console::ConsoleError;
use crate::firm::FirmError;
use crate::hw::{RAM_BASE, RAM_SIZE};
use crate::nand::NandError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("search exhausted after {trials} trials")]
    SearchExhausted { trials: u64 },
    #[error("attack failed, boot ended in {0}")]
    AttackFailed(BootOutcome),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error(transparent)]
    Console(#[from] ConsoleError),
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error(transparent)]
    Firm(#[from] FirmError),
}

/// Branch windows have to be word aligned and inside ARM9 RAM.
pub(crate) fn check_window(window: &Range<u32>) -> Result<(), AttackError> {
    if !window.start.is_multiple_of(4) || !window.end.is_multiple_of(4) {
        return Err(AttackError::PreconditionFailed(format!(
            "window {:#010x}..{:#010x} is not word aligned",
            window.start, window.end
        )));
    }
    let ram = RAM_BASE as u64..RAM_BASE as u64 + RAM_SIZE as u64;
    if !window.is_empty() && !(ram.contains(&(window.start as u64)) && window.end as u64 <= ram.end) {
        return Err(AttackError::PreconditionFailed(format!(
            "window {:#010x}..{:#010x} is outside RAM",
            window.start, window.end
        )));
    }
    Ok(())
}
