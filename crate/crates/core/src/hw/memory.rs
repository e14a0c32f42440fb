use serde::{Deserialize, Serialize};

use super::HwError;
use crate::crypto;

pub const RAM_BASE: u32 = 0x0800_0000;
pub const RAM_SIZE: u32 = 0x0018_0000;
pub const ITCM_LEN: usize = 0x90;

/// What a payload does when the micro-executor reaches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookAction {
    /// Copy the SHA_HASH register out, as privileged ARM9 code could.
    DumpShaHash,
    /// Report execution without touching console state.
    Marker,
}

/// A host-side stand-in for a planted payload.
///
/// The hook is armed only while the bytes in `[start, start + len)` still
/// hash to `digest`, so a payload that has been zeroed or overwritten no
/// longer runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hook {
    pub id: String,
    pub start: u32,
    pub len: u32,
    pub digest: [u8; 32],
    pub action: HookAction,
}

impl Hook {
    pub fn for_payload(id: impl Into<String>, start: u32, payload: &[u8], action: HookAction) -> Self {
        Self {
            id: id.into(),
            start,
            len: payload.len() as u32,
            digest: crypto::sha256(payload),
            action,
        }
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.start && (addr - self.start) < self.len
    }
}

/// Flat little-endian ARM9 RAM, the ITCM scratch area, and payload hooks.
#[derive(Clone)]
pub struct MemoryMap {
    base: u32,
    contents: Vec<u8>,
    itcm: [u8; ITCM_LEN],
    hooks: Vec<Hook>,
}

impl Default for MemoryMap {
    fn default() -> Self {
        Self::new(RAM_BASE, RAM_SIZE)
    }
}

impl std::fmt::Debug for MemoryMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryMap")
            .field("base", &format_args!("{:#010x}", self.base))
            .field("size", &format_args!("{:#x}", self.contents.len()))
            .field("hooks", &self.hooks)
            .finish()
    }
}

impl MemoryMap {
    pub fn new(base: u32, size: u32) -> Self {
        Self {
            base,
            contents: vec![0; size as usize],
            itcm: [0; ITCM_LEN],
            hooks: Vec::new(),
        }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn size(&self) -> u32 {
        self.contents.len() as u32
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && ((addr - self.base) as usize) < self.contents.len()
    }

    fn offset(&self, addr: u32, len: usize) -> Result<usize, HwError> {
        let err = HwError::OutOfRangeAccess { addr, len };
        let off = addr.checked_sub(self.base).ok_or(err)? as usize;
        match off.checked_add(len) {
            Some(end) if end <= self.contents.len() => Ok(off),
            _ => Err(err),
        }
    }

    pub fn read(&self, addr: u32, len: usize) -> Result<&[u8], HwError> {
        let off = self.offset(addr, len)?;
        Ok(&self.contents[off..off + len])
    }

    pub fn read_mut(&mut self, addr: u32, len: usize) -> Result<&mut [u8], HwError> {
        let off = self.offset(addr, len)?;
        Ok(&mut self.contents[off..off + len])
    }

    pub fn write(&mut self, addr: u32, bytes: &[u8]) -> Result<(), HwError> {
        self.read_mut(addr, bytes.len())?.copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_u32(&self, addr: u32) -> Result<u32, HwError> {
        let b = self.read(addr, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn write_u32(&mut self, addr: u32, word: u32) -> Result<(), HwError> {
        self.write(addr, &word.to_le_bytes())
    }

    pub fn itcm(&self) -> &[u8; ITCM_LEN] {
        &self.itcm
    }

    pub fn itcm_mut(&mut self) -> &mut [u8; ITCM_LEN] {
        &mut self.itcm
    }

    /// Registers a payload hook. The whole range must be mapped RAM.
    pub fn add_hook(&mut self, hook: Hook) -> Result<(), HwError> {
        self.offset(hook.start, hook.len as usize)?;
        self.hooks.retain(|h| h.id != hook.id);
        self.hooks.push(hook);
        Ok(())
    }

    pub fn remove_hook(&mut self, id: &str) {
        self.hooks.retain(|h| h.id != id);
    }

    pub fn hooks(&self) -> &[Hook] {
        &self.hooks
    }

    /// The hook covering `pc` whose payload bytes are intact, if any.
    pub fn armed_hook_at(&self, pc: u32) -> Option<&Hook> {
        self.hooks.iter().find(|h| {
            h.contains(pc)
                && self
                    .read(h.start, h.len as usize)
                    .is_ok_and(|bytes| crypto::sha256(bytes) == h.digest)
        })
    }

    /// Cold reset: RAM and ITCM zeroed. Hooks are host bookkeeping and stay.
    pub(crate) fn zero(&mut self) {
        self.contents.fill(0);
        self.itcm.fill(0);
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.contents
    }

    pub(crate) fn from_parts(base: u32, contents: Vec<u8>, itcm: [u8; ITCM_LEN], hooks: Vec<Hook>) -> Self {
        Self {
            base,
            contents,
            itcm,
            hooks,
        }
    }
}
