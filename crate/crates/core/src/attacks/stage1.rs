//! First stage: get the uncleared SHA_HASH register dumped.
//!
//! Key #1 is copied over Key #2 on NAND, a release whose wrong-key entry
//! word branches far into RAM is installed, and a NOP sled plus a payload
//! are left in RAM across a warm reset. The loader verifies Key #1, decrypts
//! with it a second time, and jumps into the sled.

use crate::bootchain::{BootOutcome, BootReport, NOP};
use crate::console::{Console, RebootMode};
use crate::firm::FirmImage;
use crate::hw::{Hook, HookAction};
use crate::nand::FirmSlot;
use crate::vendor::{VULNERABLE_TARGET, VULNERABLE_WINDOW_WORDS};

use super::shuffle::{shuffle_keysector, ShufflePlan};
use super::AttackError;

pub const STAGE1_HOOK: &str = "stage1-dump-sha";
/// Stand-in payload bytes; what matters is that the hook guards them.
const PAYLOAD_STUB: [u32; 4] = [0xE59F_0004, 0xE590_1000, 0xE581_1000, 0xE12F_FF1E];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1Options {
    pub sled_addr: u32,
    /// Sled length in bytes; 0 plants nothing at all.
    pub sled_len: u32,
    pub reboot: RebootMode,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Self {
            sled_addr: VULNERABLE_TARGET,
            sled_len: 4 * VULNERABLE_WINDOW_WORDS,
            reboot: RebootMode::Warm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Capture {
    pub otp_hash: [u8; 32],
    pub payload_addr: u32,
    pub boot: BootReport,
}

fn payload_bytes() -> Vec<u8> {
    PAYLOAD_STUB.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn capture_otp_hash(
    console: &mut Console,
    vulnerable_build: &FirmImage,
    opts: &Stage1Options,
) -> Result<Stage1Capture, AttackError> {
    if !opts.sled_addr.is_multiple_of(4) || !opts.sled_len.is_multiple_of(4) {
        return Err(AttackError::PreconditionFailed("sled must be word aligned".into()));
    }
    let key2 = vulnerable_build.header.payload_key_number;
    if key2 == 1 {
        return Err(AttackError::PreconditionFailed(
            "build decrypts with Key #1; copying it changes nothing".into(),
        ));
    }
    console.install_firm(FirmSlot::Firm0, &vulnerable_build.to_bytes())?;
    let original = console.nand().keysector_block(key2 as usize)?;
    shuffle_keysector(console.nand_mut(), &ShufflePlan::copy_key(1, key2)?);

    let payload_addr = opts.sled_addr + opts.sled_len;
    if opts.sled_len > 0 {
        plant(console, opts.sled_addr, opts.sled_len)
            .map_err(|e| AttackError::PreconditionFailed(format!("planting sled: {e}")))?;
    }
    let boot = console.boot(opts.reboot);

    console.memory_mut().remove_hook(STAGE1_HOOK);
    console.nand_mut().set_keysector_block(key2 as usize, &original)?;

    match &boot.outcome {
        BootOutcome::PayloadExecuted { hook_id, captured } if hook_id == STAGE1_HOOK => {
            let otp_hash = captured
                .as_slice()
                .try_into()
                .map_err(|_| AttackError::AttackFailed(boot.outcome.clone()))?;
            Ok(Stage1Capture {
                otp_hash,
                payload_addr,
                boot,
            })
        }
        other => Err(AttackError::AttackFailed(other.clone())),
    }
}

fn plant(console: &mut Console, sled_addr: u32, sled_len: u32) -> Result<(), crate::hw::HwError> {
    let mem = console.memory_mut();
    let sled: Vec<u8> = std::iter::repeat_n(NOP.to_le_bytes(), sled_len as usize / 4)
        .flatten()
        .collect();
    mem.write(sled_addr, &sled)?;
    let payload = payload_bytes();
    let at = sled_addr + sled_len;
    mem.write(at, &payload)?;
    mem.add_hook(Hook::for_payload(STAGE1_HOOK, at, &payload, HookAction::DumpShaHash))
}
