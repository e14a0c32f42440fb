#![allow(dead_code)]

use std::sync::OnceLock;

use bootshuffle::console::Console;
use bootshuffle::crypto;
use bootshuffle::vendor::{Vendor, DEFAULT_VENDOR_SEED};

pub fn vendor() -> &'static Vendor {
    static V: OnceLock<Vendor> = OnceLock::new();
    V.get_or_init(|| Vendor::generate(DEFAULT_VENDOR_SEED).unwrap())
}

pub fn console(seed: u64) -> Console {
    vendor().manufacture(seed).unwrap()
}

pub fn otp_hash(console: &Console) -> [u8; 32] {
    crypto::sha256(console.otp_read().expect("console is freshly reset"))
}

/// AES(key, zero block), the probe used to fingerprint a keyslot.
pub fn probe_value(key: &[u8; 16]) -> [u8; 16] {
    crypto::encrypt_block(&crypto::cipher(key), &[0; 16])
}

pub fn probe_slot(console: &Console, slot: u8) -> [u8; 16] {
    console
        .aes()
        .ecb(slot, bootshuffle::hw::Direction::Encrypt, &[0; 16])
        .unwrap()
        .try_into()
        .unwrap()
}
