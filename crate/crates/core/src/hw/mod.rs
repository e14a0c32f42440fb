//! Security-relevant hardware of the simulated console.
//!
//! * [`OtpRegion`]: console-unique secret with a boot-epoch lock (CFG_SYSPROT9).
//! * [`AesEngine`]: 64 write-only keyslots. Keys go in; only data comes out.
//! * [`ShaEngine`]: SHA-256 unit whose SHA_HASH output register is sticky.
//! * [`MemoryMap`]: ARM9 RAM plus ITCM, persistent across warm reboots.

mod aes_engine;
mod memory;

pub use aes_engine::{AesEngine, Direction, KEYSLOT_COUNT};
pub use memory::{Hook, HookAction, MemoryMap, ITCM_LEN, RAM_BASE, RAM_SIZE};

use thiserror::Error;

use crate::crypto;

pub const OTP_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HwError {
    #[error("OTP region is locked until next reboot")]
    OtpLocked,
    #[error("keyslot {0:#04x} is out of range")]
    SlotOutOfRange(u8),
    #[error("keyslot {0:#04x} holds no key")]
    EmptySourceSlot(u8),
    #[error("data length {0} is not a multiple of the AES block size")]
    BadLength(usize),
    #[error("SHA_HASH register is empty")]
    EmptyLatch,
    #[error("access of {len:#x} bytes at {addr:#010x} is outside mapped memory")]
    OutOfRangeAccess { addr: u32, len: usize },
}

/// The console-unique OTP bytes and the CFG_SYSPROT9 gate in front of them.
#[derive(Clone)]
pub struct OtpRegion {
    data: [u8; OTP_LEN],
    locked: bool,
}

impl OtpRegion {
    pub fn new(data: [u8; OTP_LEN]) -> Self {
        Self {
            data,
            locked: false,
        }
    }

    pub fn read(&self) -> Result<&[u8; OTP_LEN], HwError> {
        if self.locked {
            Err(HwError::OtpLocked)
        } else {
            Ok(&self.data)
        }
    }

    /// Sets CFG_SYSPROT9. Idempotent; only a reboot clears it.
    pub fn lock(&mut self) {
        self.locked = true;
    }

    pub fn is_locked(&self) -> bool {
        self.locked
    }

    pub(crate) fn reset(&mut self) {
        self.locked = false;
    }

    /// Raw bytes for the console snapshot writer. Not reachable from
    /// simulated software.
    pub(crate) fn raw(&self) -> &[u8; OTP_LEN] {
        &self.data
    }
}

impl std::fmt::Debug for OtpRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OtpRegion")
            .field("locked", &self.locked)
            .finish_non_exhaustive()
    }
}

/// SHA-256 unit. The SHA_HASH latch keeps its value until software clears it.
#[derive(Debug, Clone, Default)]
pub struct ShaEngine {
    latch: Option<[u8; 32]>,
}

impl ShaEngine {
    pub fn compute_and_latch(&mut self, data: &[u8]) -> [u8; 32] {
        let digest = crypto::sha256(data);
        self.latch = Some(digest);
        digest
    }

    /// Non-destructive read of SHA_HASH.
    pub fn read_latch(&self) -> Result<[u8; 32], HwError> {
        self.latch.ok_or(HwError::EmptyLatch)
    }

    pub fn clear_latch(&mut self) {
        self.latch = None;
    }

    pub(crate) fn restore_latch(&mut self, latch: Option<[u8; 32]>) {
        self.latch = latch;
    }
}
