//! Search for a Key #2 whose wrong decryption of the entry word is a
//! branch into a chosen window.
//!
//! Candidates come from a seeded counter-mode stream, indexed from 0. The
//! stream is scanned in fixed rounds, each split into fixed chunks that
//! workers take in any order; the lowest hit index in a round wins. The
//! answer therefore depends only on (image, window, seed).

use std::ops::Range;

use rayon::prelude::*;

use crate::bootchain::{decode_instruction, Instruction};
use crate::crypto::{self, Block, Key};
use crate::firm::FirmImage;

use super::{check_window, AttackError};

pub const DEFAULT_MAX_TRIALS: u64 = 1 << 24;
const CHUNK: u64 = 1 << 12;
const ROUND: u64 = CHUNK * 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BruteforceConfig {
    pub seed: u64,
    pub workers: usize,
    pub max_trials: u64,
}

impl BruteforceConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            workers: 1,
            max_trials: DEFAULT_MAX_TRIALS,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn max_trials(mut self, max_trials: u64) -> Self {
        self.max_trials = max_trials;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BruteforceResult {
    pub key: Key,
    /// Candidates drawn, winner included.
    pub trials: u64,
    pub target: u32,
}

fn generator(seed: u64) -> aes::Aes128 {
    let mut buf = b"bruteforce:".to_vec();
    buf.extend_from_slice(&seed.to_le_bytes());
    crypto::cipher(&crypto::key_from_digest(&crypto::sha256(&buf)))
}

/// Candidate key number `index` of the stream for `seed`.
pub fn candidate_key(seed: u64, index: u64) -> Key {
    crypto::encrypt_block(&generator(seed), &(index as u128).to_be_bytes())
}

/// Entry word an image decrypts to under `key`, without touching the rest
/// of the section.
pub fn wrong_key_entry_word(image: &FirmImage, key: &Key) -> u32 {
    let off = image.header.entry_offset() as usize;
    let ks = crypto::keystream_block(&crypto::cipher(key), &image.header.ctr_nonce, (off / 16) as u64);
    let ct = &image.section_ciphertext[off..off + 4];
    u32::from_le_bytes(std::array::from_fn(|j| ct[j] ^ ks[off % 16 + j]))
}

struct Target<'a> {
    gen: aes::Aes128,
    nonce: Block,
    counter: u64,
    lane: usize,
    ct: [u8; 4],
    pc: u32,
    window: &'a Range<u32>,
}

impl Target<'_> {
    fn test(&self, index: u64) -> Option<(Key, u32)> {
        let key = crypto::encrypt_block(&self.gen, &(index as u128).to_be_bytes());
        let ks = crypto::keystream_block(&crypto::cipher(&key), &self.nonce, self.counter);
        let word = u32::from_le_bytes(std::array::from_fn(|j| self.ct[j] ^ ks[self.lane + j]));
        match decode_instruction(word, self.pc) {
            Instruction::Branch { target } if self.window.contains(&target) => Some((key, target)),
            _ => None,
        }
    }

    fn first_in(&self, range: Range<u64>) -> Option<(u64, Key, u32)> {
        range.into_iter().find_map(|i| self.test(i).map(|(k, t)| (i, k, t)))
    }
}

pub fn bruteforce_branch_key(
    image: &FirmImage,
    window: Range<u32>,
    config: &BruteforceConfig,
) -> Result<BruteforceResult, AttackError> {
    check_window(&window)?;
    if window.is_empty() {
        return Err(AttackError::PreconditionFailed("branch window is empty".into()));
    }
    let off = image.header.entry_offset() as usize;
    let target = Target {
        gen: generator(config.seed),
        nonce: image.header.ctr_nonce,
        counter: (off / 16) as u64,
        lane: off % 16,
        ct: image.section_ciphertext[off..off + 4].try_into().unwrap(),
        pc: image.header.entrypoint,
        window: &window,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| AttackError::PreconditionFailed(format!("worker pool: {e}")))?;

    let mut start = 0;
    while start < config.max_trials {
        let end = (start + ROUND).min(config.max_trials);
        let chunks: Vec<Range<u64>> = (start..end)
            .step_by(CHUNK as usize)
            .map(|c| c..(c + CHUNK).min(end))
            .collect();
        let hit = pool.install(|| {
            chunks
                .into_par_iter()
                .filter_map(|c| target.first_in(c))
                .min_by_key(|&(i, _, _)| i)
        });
        if let Some((index, key, t)) = hit {
            return Ok(BruteforceResult {
                key,
                trials: index + 1,
                target: t,
            });
        }
        start = end;
    }
    Err(AttackError::SearchExhausted {
        trials: config.max_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firm::{build_firm, FirmBuild, LoaderVariant};
    use crate::testutil::test_signer;

    const LOAD: u32 = 0x0800_6080;

    fn image() -> FirmImage {
        let code: Vec<u8> = (0..0x1000u32).map(|i| (i.wrapping_mul(31) >> 3) as u8).collect();
        build_firm(
            &FirmBuild {
                version_label: "10.2.0",
                loader_variant: LoaderVariant::V2,
                clear_after_decrypt: false,
                code_plaintext: &code,
                section_load_addr: LOAD,
                entrypoint: LOAD + 0x100,
                payload_key: [0x22; 16],
                payload_key_number: 2,
                ctr_nonce: [0x0c; 16],
                key1_check: [0; 16],
                rodata_key: [0; 16],
            },
            test_signer(),
        )
        .unwrap()
    }

    #[test]
    fn result_reverified_by_full_decrypt() {
        let img = image();
        let window = 0x0810_0000..0x0814_0000;
        let r = bruteforce_branch_key(&img, window.clone(), &BruteforceConfig::new(11)).unwrap();
        assert_eq!(r.key, candidate_key(11, r.trials - 1));
        let plain = img.decrypt_section(&r.key);
        let word = u32::from_le_bytes(plain[0x100..0x104].try_into().unwrap());
        assert_eq!(word, wrong_key_entry_word(&img, &r.key));
        assert_eq!(
            decode_instruction(word, LOAD + 0x100),
            Instruction::Branch { target: r.target }
        );
        assert!(window.contains(&r.target));
        assert!(r.trials <= 20 * 65536);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let img = image();
        let window = 0x0810_0000..0x0811_0000;
        let one = bruteforce_branch_key(&img, window.clone(), &BruteforceConfig::new(5)).unwrap();
        let many =
            bruteforce_branch_key(&img, window, &BruteforceConfig::new(5).workers(8)).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn no_earlier_hit_exists() {
        let img = image();
        let window = 0x0810_0000..0x0814_0000;
        let r = bruteforce_branch_key(&img, window.clone(), &BruteforceConfig::new(2).workers(4))
            .unwrap();
        for i in 0..r.trials - 1 {
            let w = wrong_key_entry_word(&img, &candidate_key(2, i));
            if let Instruction::Branch { target } = decode_instruction(w, LOAD + 0x100) {
                assert!(!window.contains(&target), "earlier hit at {i}");
            }
        }
    }

    #[test]
    fn exhausts_and_rejects() {
        let img = image();
        assert!(matches!(
            bruteforce_branch_key(&img, 0x0810_0000..0x0810_0004, &BruteforceConfig::new(1).max_trials(5000)),
            Err(AttackError::SearchExhausted { trials: 5000 })
        ));
        assert!(matches!(
            bruteforce_branch_key(&img, 0x0810_0000..0x0810_0000, &BruteforceConfig::new(1)),
            Err(AttackError::PreconditionFailed(_))
        ));
    }
}
