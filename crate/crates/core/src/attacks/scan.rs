//! Which keysector key, sitting where Key #2 belongs, turns a release's
//! entry word into a usable branch?

use serde::Serialize;

use crate::bootchain::{decode_instruction, Instruction};
use crate::console::{Console, RebootMode};
use crate::firm::{FirmImage, LoaderVariant};
use crate::hw::{RAM_BASE, RAM_SIZE};
use crate::nand::{FirmSlot, Keysector, KEYSECTOR_BLOCKS};

use super::bruteforce::wrong_key_entry_word;
use super::shuffle::{shuffle_keysector, ShufflePlan};
use super::AttackError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetUsability {
    InRam,
    OutOfRange,
}

impl TargetUsability {
    fn of(target: u32) -> Self {
        if (RAM_BASE..RAM_BASE + RAM_SIZE).contains(&target) {
            TargetUsability::InRam
        } else {
            TargetUsability::OutOfRange
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScanHit {
    pub version_label: String,
    pub key_number: u8,
    pub entry_word: u32,
    pub decoded: Instruction,
    pub target_usability: TargetUsability,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    /// (build, candidate key) pairs looked at.
    pub examined: usize,
    /// Every candidate that decoded to a branch, usable or not.
    pub hits: Vec<ScanHit>,
}

impl ScanReport {
    pub fn usable(&self) -> impl Iterator<Item = &ScanHit> {
        self.hits
            .iter()
            .filter(|h| h.target_usability == TargetUsability::InRam)
    }

    fn record(&mut self, build: &FirmImage, key_number: u8, entry_word: u32) {
        self.examined += 1;
        let decoded = decode_instruction(entry_word, build.header.entrypoint);
        if let Instruction::Branch { target } = decoded {
            self.hits.push(ScanHit {
                version_label: build.header.version_label.clone(),
                key_number,
                entry_word,
                decoded,
                target_usability: TargetUsability::of(target),
            });
        }
    }
}

/// Only second-generation builds read a key that nothing verifies.
fn scannable(builds: &[FirmImage]) -> impl Iterator<Item = &FirmImage> {
    builds
        .iter()
        .filter(|b| b.header.loader_variant == LoaderVariant::V2)
}

fn candidates(build: &FirmImage) -> impl Iterator<Item = u8> {
    let skip = build.header.payload_key_number;
    (1..=KEYSECTOR_BLOCKS as u8).filter(move |&n| n != skip)
}

/// White-box scan: computes each wrong-key entry word from known keysector
/// plaintext without booting anything.
pub fn scan_harness(builds: &[FirmImage], keys: &Keysector) -> ScanReport {
    let mut report = ScanReport::default();
    for build in scannable(builds) {
        for n in candidates(build) {
            let word = wrong_key_entry_word(build, &keys.0[n as usize - 1]);
            report.record(build, n, word);
        }
    }
    report
}

/// Black-box scan: for every candidate, copies its ciphertext block over
/// the payload key's slot, boots, and reads back the word the loader jumped
/// to. Needs no key material. NAND is restored afterwards.
pub fn scan_black_box(console: &mut Console, builds: &[FirmImage]) -> Result<ScanReport, AttackError> {
    let saved_nand = console.nand().clone();
    let result = scan_boots(console, builds, &saved_nand);
    *console.nand_mut() = saved_nand;
    result
}

fn scan_boots(
    console: &mut Console,
    builds: &[FirmImage],
    pristine: &crate::nand::NandImage,
) -> Result<ScanReport, AttackError> {
    let mut report = ScanReport::default();
    for build in scannable(builds) {
        console.install_firm(FirmSlot::Firm0, &build.to_bytes())?;
        let dst = build.header.payload_key_number;
        for n in candidates(build) {
            console.nand_mut().set_keysector(&pristine.keysector());
            shuffle_keysector(console.nand_mut(), &ShufflePlan::copy_key(n, dst)?);
            let boot = console.boot(RebootMode::Warm);
            match boot.entry_word {
                Some(word) => report.record(build, n, word),
                None => {
                    return Err(AttackError::AttackFailed(boot.outcome));
                }
            }
        }
    }
    Ok(report)
}
