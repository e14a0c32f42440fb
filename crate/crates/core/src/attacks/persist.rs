//! Second stage: a payload that survives power cycles.
//!
//! The largest signed release goes to FIRM0 with a sled and payload written
//! into its tail, which breaks its signature. The smallest signed release
//! goes to FIRM1. The boot ROM rejects FIRM0, loads FIRM1 over it, and the
//! tail of FIRM0 stays in RAM past the end of FIRM1. A brute-forced Key #2,
//! wrapped with the captured OTP hash, makes FIRM1's entry word jump there.

use std::ops::Range;

use crate::bootchain::{FIRM_LOAD_BASE, NOP};
use crate::console::Console;
use crate::crypto::{self, Block};
use crate::firm::{FirmImage, LoaderVariant};
use crate::hw::{Direction, Hook, HookAction};
use crate::nand::FirmSlot;

use super::bruteforce::{bruteforce_branch_key, BruteforceConfig};
use super::AttackError;

/// Distance past the end of FIRM1 that the loader leaves alone.
pub const DEFAULT_GAP: u32 = 0x190;
pub const PERSIST_HOOK: &str = "persist-payload";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistPlan {
    pub big_version: String,
    pub small_version: String,
    /// Branch window handed to the brute force.
    pub window: Range<u32>,
    pub sled_start: u32,
    pub payload_addr: u32,
    pub key: [u8; 16],
    pub trials: u64,
}

/// AES-128-ECB over keysector blocks under the first half of the OTP hash,
/// the same key the loader puts in keyslot 0x11.
pub fn keysector_recrypt(otp_hash: &[u8; 32], direction: Direction, blocks: &[Block]) -> Vec<Block> {
    let key = zeroize::Zeroizing::new(crypto::key_from_digest(otp_hash));
    let flat: Vec<u8> = blocks.concat();
    let out = crypto::ecb_with_key(&key, direction == Direction::Encrypt, &flat);
    out.chunks_exact(16).map(|c| c.try_into().unwrap()).collect()
}

fn precondition(msg: impl Into<String>) -> AttackError {
    AttackError::PreconditionFailed(msg.into())
}

#[allow(clippy::too_many_arguments)]
pub fn install_persistence(
    console: &mut Console,
    otp_hash: &[u8; 32],
    big: &FirmImage,
    small: &FirmImage,
    payload: &[u8],
    gap: u32,
    bruteforce: &BruteforceConfig,
) -> Result<PersistPlan, AttackError> {
    let vendor_key = console.vendor_key().clone();
    if !big.verify_signature(&vendor_key) || !small.verify_signature(&vendor_key) {
        return Err(precondition("both releases must carry valid signatures"));
    }
    if small.header.loader_variant != LoaderVariant::V2 {
        return Err(precondition("the small release must use the second loader"));
    }
    if payload.is_empty() {
        return Err(precondition("payload is empty"));
    }
    if !gap.is_multiple_of(4) {
        return Err(precondition("gap must be a multiple of 4"));
    }
    let (big_len, small_len) = (big.container_len() as u32, small.container_len() as u32);
    let lo = FIRM_LOAD_BASE + small_len + gap;
    let hi = (FIRM_LOAD_BASE + big_len).saturating_sub(payload.len() as u32) & !3;
    if lo >= hi {
        return Err(precondition(format!(
            "no room: FIRM0 is {big_len:#x} bytes, FIRM1 {small_len:#x} plus gap {gap:#x} plus payload {:#x}",
            payload.len()
        )));
    }
    let window = lo..hi;
    let found = bruteforce_branch_key(small, window.clone(), bruteforce)?;
    let t = found.target;

    let mut firm0 = big.to_bytes();
    let rel = |addr: u32| (addr - FIRM_LOAD_BASE) as usize;
    for at in (lo..t).step_by(4) {
        firm0[rel(at)..rel(at) + 4].copy_from_slice(&NOP.to_le_bytes());
    }
    firm0[rel(t)..rel(t) + payload.len()].copy_from_slice(payload);
    if crate::firm::verify_signature(&firm0, &vendor_key) {
        return Err(precondition("patched FIRM0 still verifies; it would boot normally"));
    }

    console.install_firm(FirmSlot::Firm0, &firm0)?;
    console.install_firm(FirmSlot::Firm1, &small.to_bytes())?;
    let wrapped = keysector_recrypt(otp_hash, Direction::Encrypt, &[found.key]);
    let key_number = small.header.payload_key_number as usize;
    console.nand_mut().set_keysector_block(key_number, &wrapped[0])?;
    console
        .memory_mut()
        .add_hook(Hook::for_payload(PERSIST_HOOK, t, payload, HookAction::DumpShaHash))
        .map_err(|e| precondition(e.to_string()))?;

    Ok(PersistPlan {
        big_version: big.header.version_label.clone(),
        small_version: small.header.version_label.clone(),
        window,
        sled_start: lo,
        payload_addr: t,
        key: found.key,
        trials: found.trials,
    })
}
