//! Secure-boot state machines and the micro-executor behind them.
//!
//! A boot is always [`boot_rom_run`]: the ROM picks a FIRM partition, hands
//! it to the ARM9Loader generation named in its header, and the loader's
//! final jump either lands on genuine firmware or is interpreted by
//! [`micro_exec`] until something terminal happens.

mod boot_rom;
mod exec;
pub mod isa;
mod loader;

pub use boot_rom::{boot_rom_run, derive_partition_key, partition_nonce, PARTITION_KEYSLOT};
pub use exec::{micro_exec, ExecOutcome};
pub use isa::{decode_instruction, encode_branch, is_branch, EncodeError, Instruction, NOP};

use serde::{Deserialize, Serialize};

use crate::nand::FirmSlot;

/// Where the boot ROM places a FIRM container in ARM9 RAM.
pub const FIRM_LOAD_BASE: u32 = 0x0800_6000;
pub const DEFAULT_STEP_LIMIT: u64 = 1_000_000;
/// Bytes past the loaded FIRM that the loader scribbles on before jumping.
pub const DEFAULT_CLOBBER_LEN: u32 = 0x190;
/// `udf #0x0f00`, written over the clobbered range.
pub const CLOBBER_WORD: u32 = 0xE7F0_00F0;

/// Reset-vector prologue every genuine firmware image starts with at its
/// entrypoint (`mrs r0, cpsr; bic r0, r0, #0x1f; orr r0, r0, #0xd3;
/// msr cpsr_fc, r0`). Finding it at the jump target means the real firmware
/// is about to run, which is where the simulation stops.
pub const ENTRY_MARKER: [u32; 4] = [0xE10F_0000, 0xE3C0_001F, 0xE380_00D3, 0xE129_F000];

pub fn entry_marker_bytes() -> [u8; 16] {
    let mut out = [0u8; 16];
    for (chunk, w) in out.chunks_exact_mut(4).zip(ENTRY_MARKER) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PanicReason {
    /// Keyslot 0x11 failed its test-vector check.
    KeyVerifyFailed,
    /// Neither FIRM partition carried a valid signature.
    NoValidFirm,
    /// Something the hardware model refused (locked OTP, unmapped load).
    Fault { detail: String },
}

/// Terminal result of one simulated boot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BootOutcome {
    ReachedFirmEntry { version_label: String },
    PayloadExecuted { hook_id: String, captured: Vec<u8> },
    Crash { pc: u32, word: Option<u32> },
    Hang { steps: u64 },
    Panic { reason: PanicReason },
}

impl BootOutcome {
    pub fn is_panic(&self) -> bool {
        matches!(self, BootOutcome::Panic { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BootOutcome::ReachedFirmEntry { .. } => "ReachedFirmEntry",
            BootOutcome::PayloadExecuted { .. } => "PayloadExecuted",
            BootOutcome::Crash { .. } => "Crash",
            BootOutcome::Hang { .. } => "Hang",
            BootOutcome::Panic { .. } => "Panic",
        }
    }
}

impl From<ExecOutcome> for BootOutcome {
    fn from(e: ExecOutcome) -> Self {
        match e {
            ExecOutcome::PayloadExecuted { hook_id, captured } => {
                BootOutcome::PayloadExecuted { hook_id, captured }
            }
            ExecOutcome::Crash { pc, word } => BootOutcome::Crash { pc, word },
            ExecOutcome::Hang { steps } => BootOutcome::Hang { steps },
        }
    }
}

impl std::fmt::Display for BootOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BootOutcome::ReachedFirmEntry { version_label } => {
                write!(f, "ReachedFirmEntry {version_label}")
            }
            BootOutcome::PayloadExecuted { hook_id, captured } => {
                write!(f, "PayloadExecuted {hook_id} ({} bytes captured)", captured.len())
            }
            BootOutcome::Crash { pc, word: Some(w) } => write!(f, "Crash pc={pc:#010x} word={w:#010x}"),
            BootOutcome::Crash { pc, word: None } => write!(f, "Crash pc={pc:#010x} (fetch fault)"),
            BootOutcome::Hang { steps } => write!(f, "Hang after {steps} steps"),
            BootOutcome::Panic { reason } => write!(f, "Panic {reason:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    BootRom,
    Loader,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::BootRom => "bootrom",
            Stage::Loader => "loader",
        })
    }
}

/// One completed numbered step, plus the security state right after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub step: &'static str,
    pub description: &'static str,
    pub otp_locked: bool,
    pub keysector_live: bool,
}

impl std::fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "STEP {} {} {}", self.stage, self.step, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootReport {
    pub outcome: BootOutcome,
    pub trace: Vec<TraceEntry>,
    /// Partition whose loader ran, if any signature checked out.
    pub booted_slot: Option<FirmSlot>,
    /// Word found at the entrypoint when the loader jumped.
    pub entry_word: Option<u32>,
}

impl BootReport {
    pub fn steps(&self, stage: Stage) -> Vec<&'static str> {
        self.trace
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.step)
            .collect()
    }

    pub fn trace_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.trace.iter().map(|e| e.to_string())
    }
}
