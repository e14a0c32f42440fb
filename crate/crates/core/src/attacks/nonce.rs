//! Fixture-side search for a CTR nonce that makes a release exploitable.

use std::ops::Range;

use crate::bootchain::{decode_instruction, Instruction};
use crate::crypto::{self, Block, Key};

use super::bruteforce::DEFAULT_MAX_TRIALS;
use super::{check_window, AttackError};

#[derive(Debug, Clone)]
pub struct NonceQuery<'a> {
    pub code_plaintext: &'a [u8],
    pub key1: Key,
    pub key2: Key,
    pub section_load_addr: u32,
    pub entry_offset: u32,
    pub window: Range<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonceSearch {
    pub nonce: Block,
    pub trials: u64,
    pub expected_trials: f64,
    /// Where the wrong-key entry word branches to.
    pub target: u32,
}

/// Expected draws until a uniformly random word is an AL branch into a
/// window of `window_words` instructions: one in 256 words is a branch, and
/// its 24-bit displacement has to hit the window.
pub fn expected_trials(window_words: u64) -> f64 {
    256.0 * (1u64 << 24) as f64 / window_words as f64
}

fn nonce_generator(seed: u64) -> aes::Aes128 {
    let mut buf = b"nonce:".to_vec();
    buf.extend_from_slice(&seed.to_le_bytes());
    crypto::cipher(&crypto::key_from_digest(&crypto::sha256(&buf)))
}

/// Draws nonces from a seeded stream until the entry word, decrypted with
/// Key #1 where Key #2 belonged, is a branch into `window`.
pub fn find_vulnerable_nonce(
    q: &NonceQuery<'_>,
    seed: u64,
    max_trials: Option<u64>,
) -> Result<NonceSearch, AttackError> {
    check_window(&q.window)?;
    if !q.entry_offset.is_multiple_of(4) || q.entry_offset as usize + 4 > q.code_plaintext.len() {
        return Err(AttackError::PreconditionFailed(
            "entry offset is misaligned or outside the code".into(),
        ));
    }
    if q.window.is_empty() {
        return Err(AttackError::SearchExhausted { trials: 0 });
    }
    let max_trials = max_trials.unwrap_or(DEFAULT_MAX_TRIALS);
    let pc = q.section_load_addr + q.entry_offset;
    let block = (q.entry_offset / 16) as u64;
    let lane = (q.entry_offset % 16) as usize;
    let pt: [u8; 4] = q.code_plaintext[q.entry_offset as usize..][..4].try_into().unwrap();
    let (gen, c1, c2) = (nonce_generator(seed), crypto::cipher(&q.key1), crypto::cipher(&q.key2));

    for i in 0..max_trials {
        let nonce = crypto::encrypt_block(&gen, &(i as u128).to_be_bytes());
        let ks1 = crypto::keystream_block(&c1, &nonce, block);
        let ks2 = crypto::keystream_block(&c2, &nonce, block);
        let word = u32::from_le_bytes(std::array::from_fn(|j| pt[j] ^ ks1[lane + j] ^ ks2[lane + j]));
        if let Instruction::Branch { target } = decode_instruction(word, pc) {
            if q.window.contains(&target) {
                return Ok(NonceSearch {
                    nonce,
                    trials: i + 1,
                    expected_trials: expected_trials(q.window.len() as u64 / 4),
                    target,
                });
            }
        }
    }
    Err(AttackError::SearchExhausted { trials: max_trials })
}
