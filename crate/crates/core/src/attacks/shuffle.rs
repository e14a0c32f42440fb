use crate::crypto::Block;
use crate::nand::{NandImage, KEYSECTOR_BLOCKS};

use super::AttackError;

/// Simultaneous block moves inside the keysector, 0-based. Every move reads
/// the sector as it was before the plan ran, so `{0→1, 1→0}` is a swap.
/// Sources may repeat; destinations may not.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShufflePlan {
    moves: Vec<(u8, u8)>,
}

impl ShufflePlan {
    pub fn new(moves: impl IntoIterator<Item = (u8, u8)>) -> Result<Self, AttackError> {
        let moves: Vec<(u8, u8)> = moves.into_iter().collect();
        let mut seen = [false; KEYSECTOR_BLOCKS];
        for &(s, d) in &moves {
            if s as usize >= KEYSECTOR_BLOCKS || d as usize >= KEYSECTOR_BLOCKS {
                return Err(AttackError::PreconditionFailed(format!(
                    "block index out of range in move {s}->{d}"
                )));
            }
            if std::mem::replace(&mut seen[d as usize], true) {
                return Err(AttackError::PreconditionFailed(format!(
                    "block {d} is the destination of two moves"
                )));
            }
        }
        Ok(Self { moves })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Overwrites key `dst` with a copy of key `src`, both 1-based key
    /// numbers as the loader counts them.
    pub fn copy_key(src: u8, dst: u8) -> Result<Self, AttackError> {
        if src == 0 || dst == 0 {
            return Err(AttackError::PreconditionFailed("key numbers start at 1".into()));
        }
        Self::new([(src - 1, dst - 1)])
    }

    pub fn moves(&self) -> &[(u8, u8)] {
        &self.moves
    }

    /// Applies the plan to any 32-block array, ciphertext or plaintext.
    pub fn apply(&self, blocks: &[Block; KEYSECTOR_BLOCKS]) -> [Block; KEYSECTOR_BLOCKS] {
        let mut out = *blocks;
        for &(s, d) in &self.moves {
            out[d as usize] = blocks[s as usize];
        }
        out
    }
}

/// Rearranges the encrypted keysector in place. Takes no key material.
pub fn shuffle_keysector(nand: &mut NandImage, plan: &ShufflePlan) {
    let mut ks = nand.keysector();
    ks.0 = plan.apply(&ks.0);
    nand.set_keysector(&ks);
}
