//! ARM9Loader, both generations.
//!
//! The loader is native simulator code selected by the FIRM header rather
//! than code inside the image. Each numbered step is recorded in the trace
//! after it completes.

use zeroize::Zeroizing;

use super::{
    entry_marker_bytes, micro_exec, BootOutcome, PanicReason, Stage, TraceEntry, CLOBBER_WORD,
};
use crate::console::Console;
use crate::crypto::{self, Key};
use crate::firm::{unmask_rodata_key, FirmHeader, LoaderVariant, HEADER_LEN};
use crate::hw::Direction;
use crate::nand::{KEYSECTOR_INDEX, SECTOR_LEN};

pub const KEYSLOT_CONSOLE: u8 = 0x11;
pub const KEYSLOT_RODATA: u8 = 0x18;
/// All-zero test vector for the Key #1 check.
pub const KEY_TEST_VECTOR: [u8; 16] = [0; 16];

/// A FIRM container the boot ROM has placed and verified in RAM.
pub(crate) struct LoadedFirm {
    pub header: FirmHeader,
    pub base: u32,
    pub len: usize,
}

pub(crate) struct LoaderResult {
    pub outcome: BootOutcome,
    pub entry_word: Option<u32>,
}

struct LoaderRun<'a> {
    console: &'a mut Console,
    trace: &'a mut Vec<TraceEntry>,
    keysector: Option<Zeroizing<[u8; SECTOR_LEN]>>,
}

type Step<T> = Result<T, BootOutcome>;

fn fault(detail: impl std::fmt::Display) -> BootOutcome {
    BootOutcome::Panic {
        reason: PanicReason::Fault {
            detail: detail.to_string(),
        },
    }
}

impl LoaderRun<'_> {
    fn mark(&mut self, step: &'static str, description: &'static str) {
        self.trace.push(TraceEntry {
            stage: Stage::Loader,
            step,
            description,
            otp_locked: self.console.otp.is_locked(),
            keysector_live: self.keysector.is_some(),
        });
    }

    fn keysector_key(&self, number: u8) -> Step<Zeroizing<Key>> {
        let ks = self.keysector.as_ref().ok_or_else(|| fault("keysector already wiped"))?;
        let i = (number as usize - 1) * 16;
        let mut k = Zeroizing::new([0u8; 16]);
        k.copy_from_slice(&ks[i..i + 16]);
        Ok(k)
    }

    /// Steps 1-6, shared by both generations: unwrap the keysector with the
    /// OTP-derived key, then lock the OTP away.
    fn unwrap_keysector(&mut self) -> Step<()> {
        let c = &mut *self.console;
        let otp = c.otp.read().map_err(fault)?;
        let digest = Zeroizing::new(c.sha.compute_and_latch(otp));
        self.mark("1", "hash OTP region, latch digest in SHA_HASH");

        let key = Zeroizing::new(crypto::key_from_digest(&digest));
        self.console.aes.set_keyslot(KEYSLOT_CONSOLE, &key).map_err(fault)?;
        self.mark("2", "derive keyslot 0x11 from OTP hash");

        let mut sector = Zeroizing::new([0u8; SECTOR_LEN]);
        sector.copy_from_slice(self.console.nand.read_sector(KEYSECTOR_INDEX).map_err(fault)?);
        self.mark("3", "read keysector from NAND sector 0x96");

        self.console
            .aes
            .ecb_in_place(KEYSLOT_CONSOLE, Direction::Decrypt, &mut sector[..])
            .map_err(fault)?;
        self.keysector = Some(sector);
        self.mark("4", "decrypt keysector with keyslot 0x11");

        self.console.aes.clear_keyslot(KEYSLOT_CONSOLE).map_err(fault)?;
        self.mark("5", "clear keyslot 0x11");

        self.console.otp.lock();
        self.mark("6", "set CFG_SYSPROT9, OTP locked");
        Ok(())
    }

    fn load_key(&mut self, number: u8) -> Step<()> {
        let key = self.keysector_key(number)?;
        self.console.aes.set_keyslot(KEYSLOT_CONSOLE, &key).map_err(fault)
    }

    fn wipe_keysector(&mut self) {
        // Zeroizing clears the buffer on drop
        self.keysector = None;
    }

    fn verify_key1(&mut self, header: &FirmHeader) -> Step<bool> {
        self.console
            .aes
            .verify_keyslot(KEYSLOT_CONSOLE, &KEY_TEST_VECTOR, &header.key1_check)
            .map_err(fault)
    }

    fn decrypt_section(&mut self, firm: &LoadedFirm) -> Step<()> {
        let h = &firm.header;
        let c = &mut *self.console;
        let mut section = c
            .memory
            .read(firm.base + HEADER_LEN as u32, h.section_size as usize)
            .map_err(fault)?
            .to_vec();
        c.aes
            .ctr_in_place(KEYSLOT_CONSOLE, &h.ctr_nonce, &mut section)
            .map_err(fault)?;
        c.memory.write(h.section_load_addr, &section).map_err(fault)
    }

    /// Whatever the loader leaves behind just past the loaded image.
    fn clobber(&mut self, firm: &LoadedFirm) {
        let c = &mut *self.console;
        let start = firm.base + firm.len as u32;
        for i in 0..c.config.clobber_len / 4 {
            // best effort: the range may run off the end of RAM
            let _ = c.memory.write_u32(start + 4 * i, CLOBBER_WORD);
        }
    }

    fn jump(&mut self, firm: &LoadedFirm) -> LoaderResult {
        let c = &*self.console;
        let entry = firm.header.entrypoint;
        let entry_word = c.memory.read_u32(entry).ok();
        let genuine = c
            .memory
            .read(entry, 16)
            .is_ok_and(|b| b == entry_marker_bytes());
        let outcome = if genuine {
            BootOutcome::ReachedFirmEntry {
                version_label: firm.header.version_label.clone(),
            }
        } else {
            micro_exec(&c.memory, &c.sha, entry, c.config.step_limit).into()
        };
        LoaderResult {
            outcome,
            entry_word,
        }
    }

    fn run_v1(&mut self, firm: &LoadedFirm) -> Step<LoaderResult> {
        self.unwrap_keysector()?;

        self.load_key(1)?;
        self.wipe_keysector();
        self.mark("7", "load keysector Key #1 into keyslot 0x11");

        self.console
            .aes
            .derive_subkeys(KEYSLOT_CONSOLE, 0x18..=0x1f)
            .map_err(fault)?;
        self.mark("8", "derive sub-keys 0x18-0x1F from keyslot 0x11");

        let ok = self.verify_key1(&firm.header)?;
        self.mark("9", "verify keyslot 0x11 against test vector");
        if !ok {
            return Err(BootOutcome::Panic {
                reason: PanicReason::KeyVerifyFailed,
            });
        }

        self.decrypt_section(firm)?;
        self.mark("10", "decrypt ARM9 firmware section");

        if firm.header.clear_after_decrypt {
            self.console.aes.clear_keyslot(KEYSLOT_CONSOLE).map_err(fault)?;
            self.mark("10a", "clear keyslot 0x11");
        }

        self.clobber(firm);
        self.mark("11", "jump to ARM9 firmware entrypoint");
        Ok(self.jump(firm))
    }

    fn run_v2(&mut self, firm: &LoadedFirm) -> Step<LoaderResult> {
        self.unwrap_keysector()?;

        let rodata = Zeroizing::new(unmask_rodata_key(&firm.header.masked_rodata_key));
        self.console.aes.set_keyslot(KEYSLOT_RODATA, &rodata).map_err(fault)?;
        self.mark("7", "unmask loader read-only key into keyslot 0x18");

        self.load_key(1)?;
        self.mark("8", "load keysector Key #1 into keyslot 0x11");

        self.console
            .aes
            .derive_subkeys(KEYSLOT_CONSOLE, 0x19..=0x1f)
            .map_err(fault)?;
        self.mark("9", "derive sub-keys 0x19-0x1F from keyslot 0x11");

        let ok = self.verify_key1(&firm.header)?;
        self.mark("10", "verify keyslot 0x11 against test vector");
        if !ok {
            return Err(BootOutcome::Panic {
                reason: PanicReason::KeyVerifyFailed,
            });
        }

        // no test vector for this one
        self.load_key(firm.header.payload_key_number)?;
        self.wipe_keysector();
        self.mark("11", "load keysector Key #2 into keyslot 0x11");

        self.decrypt_section(firm)?;
        self.mark("12", "decrypt ARM9 firmware section");

        self.console.aes.clear_keyslot(KEYSLOT_CONSOLE).map_err(fault)?;
        self.mark("13", "clear keyslot 0x11");

        self.clobber(firm);
        self.mark("14", "jump to ARM9 firmware entrypoint");
        Ok(self.jump(firm))
    }
}

pub(crate) fn run_loader(
    console: &mut Console,
    firm: &LoadedFirm,
    trace: &mut Vec<TraceEntry>,
) -> LoaderResult {
    let mut run = LoaderRun {
        console,
        trace,
        keysector: None,
    };
    let result = match firm.header.loader_variant {
        LoaderVariant::V1 => run.run_v1(firm),
        LoaderVariant::V2 => run.run_v2(firm),
    };
    run.wipe_keysector();
    result.unwrap_or_else(|outcome| LoaderResult {
        outcome,
        entry_word: None,
    })
}
