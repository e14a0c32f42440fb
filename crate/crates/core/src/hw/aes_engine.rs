use std::fmt;
use std::ops::RangeInclusive;

use aes::Aes128;

use super::HwError;
use crate::crypto::{self, Block, Key, BLOCK_LEN};

pub const KEYSLOT_COUNT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Encrypt,
    Decrypt,
}

/// Hardware AES unit with write-only keyslots.
///
/// Slots hold expanded cipher state, never raw key bytes, and there is no
/// accessor for either. The only way to learn anything about a slot is to
/// run data through it.
#[derive(Clone)]
pub struct AesEngine {
    slots: Vec<Option<Aes128>>,
}

impl Default for AesEngine {
    fn default() -> Self {
        Self {
            slots: vec![None; KEYSLOT_COUNT],
        }
    }
}

impl fmt::Debug for AesEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let loaded: Vec<String> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| format!("{i:#04x}"))
            .collect();
        f.debug_struct("AesEngine").field("loaded", &loaded).finish()
    }
}

impl AesEngine {
    fn index(slot: u8) -> Result<usize, HwError> {
        if (slot as usize) < KEYSLOT_COUNT {
            Ok(slot as usize)
        } else {
            Err(HwError::SlotOutOfRange(slot))
        }
    }

    fn loaded(&self, slot: u8) -> Result<&Aes128, HwError> {
        self.slots[Self::index(slot)?]
            .as_ref()
            .ok_or(HwError::EmptySourceSlot(slot))
    }

    pub fn set_keyslot(&mut self, slot: u8, key: &Key) -> Result<(), HwError> {
        let i = Self::index(slot)?;
        self.slots[i] = Some(crypto::cipher(key));
        Ok(())
    }

    /// Overwrites the slot with the all-zero key.
    pub fn clear_keyslot(&mut self, slot: u8) -> Result<(), HwError> {
        self.set_keyslot(slot, &[0u8; 16])
    }

    pub fn is_loaded(&self, slot: u8) -> bool {
        matches!(self.slots.get(slot as usize), Some(Some(_)))
    }

    /// Fills every slot `n` in `dst` with `AES-ECB(src_key, [n; 16])`.
    ///
    /// Stand-in for the undocumented hardware key scrambler: deterministic
    /// and one-way in the source key.
    pub fn derive_subkeys(&mut self, src: u8, dst: RangeInclusive<u8>) -> Result<(), HwError> {
        let source = self.loaded(src)?.clone();
        for n in dst.clone() {
            Self::index(n)?;
        }
        for n in dst {
            let subkey = crypto::encrypt_block(&source, &[n; BLOCK_LEN]);
            self.slots[n as usize] = Some(crypto::cipher(&subkey));
        }
        Ok(())
    }

    pub fn verify_keyslot(
        &self,
        slot: u8,
        test_vector: &Block,
        expected: &Block,
    ) -> Result<bool, HwError> {
        let c = self.loaded(slot)?;
        Ok(crypto::encrypt_block(c, test_vector) == *expected)
    }

    pub fn ecb(&self, slot: u8, direction: Direction, data: &[u8]) -> Result<Vec<u8>, HwError> {
        let mut out = data.to_vec();
        self.ecb_in_place(slot, direction, &mut out)?;
        Ok(out)
    }

    pub fn ecb_in_place(
        &self,
        slot: u8,
        direction: Direction,
        data: &mut [u8],
    ) -> Result<(), HwError> {
        let c = self.loaded(slot)?;
        if !data.len().is_multiple_of(BLOCK_LEN) {
            return Err(HwError::BadLength(data.len()));
        }
        crypto::ecb_in_place(c, direction == Direction::Encrypt, data);
        Ok(())
    }

    pub fn ctr(&self, slot: u8, nonce: &Block, data: &[u8]) -> Result<Vec<u8>, HwError> {
        let mut out = data.to_vec();
        self.ctr_in_place(slot, nonce, &mut out)?;
        Ok(out)
    }

    pub fn ctr_in_place(&self, slot: u8, nonce: &Block, data: &mut [u8]) -> Result<(), HwError> {
        let c = self.loaded(slot)?;
        crypto::ctr_apply(c, nonce, data);
        Ok(())
    }

    /// Power-on state: every slot empty.
    pub(crate) fn reset(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }
}
