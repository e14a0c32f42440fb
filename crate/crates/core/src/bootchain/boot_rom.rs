//! Boot ROM: partition key setup, FIRM0 then FIRM1, signature check.

use super::loader::{run_loader, LoadedFirm};
use super::{BootOutcome, BootReport, PanicReason, Stage, TraceEntry, FIRM_LOAD_BASE};
use crate::console::Console;
use crate::crypto::{self, Block, Key};
use crate::firm::{FirmHeader, FirmImage, HEADER_LEN};
use crate::hw::ITCM_LEN;
use crate::nand::FirmSlot;

/// Keyslot holding the NAND partition key.
pub const PARTITION_KEYSLOT: u8 = 0x06;

/// Partition key from the per-console ITCM copy of the OTP.
pub fn derive_partition_key(itcm: &[u8; ITCM_LEN]) -> Key {
    let mut buf = Vec::with_capacity(1 + ITCM_LEN);
    buf.push(PARTITION_KEYSLOT);
    buf.extend_from_slice(itcm);
    crypto::key_from_digest(&crypto::sha256(&buf))
}

/// CTR nonce for a partition: its byte offset on NAND counted in blocks.
pub fn partition_nonce(byte_offset: usize) -> Block {
    ((byte_offset / 16) as u128).to_be_bytes()
}

struct SlotSteps {
    copy: &'static str,
    decrypt: &'static str,
    verify: &'static str,
    accept: &'static str,
    reject: &'static str,
}

const FIRM0_STEPS: SlotSteps = SlotSteps {
    copy: "3",
    decrypt: "4",
    verify: "5",
    accept: "5a",
    reject: "5b",
};

const FIRM1_STEPS: SlotSteps = SlotSteps {
    copy: "6",
    decrypt: "7",
    verify: "8",
    accept: "8a",
    reject: "8b",
};

fn mark(console: &Console, trace: &mut Vec<TraceEntry>, step: &'static str, description: &'static str) {
    trace.push(TraceEntry {
        stage: Stage::BootRom,
        step,
        description,
        otp_locked: console.otp.is_locked(),
        keysector_live: false,
    });
}

fn panic_report(reason: PanicReason, trace: Vec<TraceEntry>) -> BootReport {
    BootReport {
        outcome: BootOutcome::Panic { reason },
        trace,
        booted_slot: None,
        entry_word: None,
    }
}

/// Bytes the ROM copies for a partition: whatever its header claims,
/// clamped to the partition. Garbage headers get a header's worth.
fn copy_len(console: &Console, slot: FirmSlot) -> usize {
    let span = console.nand.partition(slot);
    let raw = &console.nand.read_partition(slot)[..HEADER_LEN];
    let claimed = console
        .aes
        .ctr(PARTITION_KEYSLOT, &partition_nonce(span.byte_offset()), raw)
        .ok()
        .and_then(|h| FirmHeader::parse(&h).ok())
        .map_or(HEADER_LEN, |h| h.container_len());
    claimed.min(span.byte_len())
}

/// Runs a full boot from the reset vector.
pub fn boot_rom_run(console: &mut Console) -> BootReport {
    let mut trace = Vec::new();

    let itcm: [u8; ITCM_LEN] = match console.otp.read() {
        Ok(otp) => otp[..ITCM_LEN].try_into().unwrap(),
        Err(e) => return panic_report(PanicReason::Fault { detail: e.to_string() }, trace),
    };
    *console.memory.itcm_mut() = itcm;
    mark(console, &mut trace, "1", "copy OTP prefix into ITCM");

    let key = zeroize::Zeroizing::new(derive_partition_key(&itcm));
    console
        .aes
        .set_keyslot(PARTITION_KEYSLOT, &key)
        .expect("partition keyslot is in range");
    mark(console, &mut trace, "2", "derive NAND partition key into keyslot 0x06");

    for (slot, steps) in [(FirmSlot::Firm0, FIRM0_STEPS), (FirmSlot::Firm1, FIRM1_STEPS)] {
        let len = copy_len(console, slot);
        let offset = console.nand.partition(slot).byte_offset();
        let raw = console.nand.read_partition(slot)[..len].to_vec();
        if let Err(e) = console.memory.write(FIRM_LOAD_BASE, &raw) {
            return panic_report(PanicReason::Fault { detail: e.to_string() }, trace);
        }
        console.stats.record_read(slot);
        mark(console, &mut trace, steps.copy, "copy FIRM partition into ARM9 RAM");

        let ram = console
            .memory
            .read_mut(FIRM_LOAD_BASE, len)
            .expect("just written");
        console
            .aes
            .ctr_in_place(PARTITION_KEYSLOT, &partition_nonce(offset), ram)
            .expect("partition keyslot is loaded");
        mark(console, &mut trace, steps.decrypt, "decrypt FIRM in place with keyslot 0x06");

        let ram = console.memory.read(FIRM_LOAD_BASE, len).expect("just written");
        let verified = FirmImage::parse(ram)
            .ok()
            .filter(|img| img.verify_signature(&console.vendor_key));
        mark(console, &mut trace, steps.verify, "check FIRM signature");

        if let Some(img) = verified {
            mark(console, &mut trace, steps.accept, "signature valid, start ARM9Loader");
            let firm = LoadedFirm {
                base: FIRM_LOAD_BASE,
                len: img.container_len(),
                header: img.header,
            };
            let result = run_loader(console, &firm, &mut trace);
            return BootReport {
                outcome: result.outcome,
                trace,
                booted_slot: Some(slot),
                entry_word: result.entry_word,
            };
        }
        mark(console, &mut trace, steps.reject, "signature invalid");
    }
    panic_report(PanicReason::NoValidFirm, trace)
}
