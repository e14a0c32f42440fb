//! Fixture vendor: signing key, keysector plaintext, firmware catalog and a
//! factory that turns out consoles.
//!
//! Everything here is derived from a single `u64` seed, so a console file
//! only needs to remember which vendor made it.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::attacks::{find_vulnerable_nonce, AttackError, NonceQuery};
use crate::bootchain::{entry_marker_bytes, FIRM_LOAD_BASE};
use crate::console::{Console, ConsoleError, RebootMode};
use crate::crypto::{self, Block, Key};
use crate::firm::{
    build_firm, FirmBuild, FirmError, FirmImage, LoaderVariant, VendorPublicKey, VendorSigningKey,
    HEADER_LEN,
};
use crate::hw::OTP_LEN;
use crate::nand::{FirmSlot, Keysector, NandImage, KEYSECTOR_BLOCKS};

pub const DEFAULT_VENDOR_SEED: u64 = 0x3d5_c0de;
/// Offset of the entrypoint inside every catalog section.
pub const ENTRY_OFFSET: u32 = 0x100;
/// Where the crafted release's wrong-key branch lands, and how far the
/// landing zone reaches.
pub const VULNERABLE_TARGET: u32 = 0x080F_D0F8;
pub const VULNERABLE_WINDOW_WORDS: u32 = 0x1_0000;
pub const VULNERABLE_VERSION: &str = "10.0.0";
/// Release installed on freshly manufactured consoles.
pub const FACTORY_VERSION: &str = "11.0.0";
pub const LARGEST_VERSION: &str = "8.1.0";
pub const SMALLEST_VERSION: &str = "10.2.0";

const VULNERABLE_NONCE_SEED: u64 = 0x0a9_1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Release {
    pub version_label: &'static str,
    pub loader: LoaderVariant,
    pub section_size: u32,
    pub clear_after_decrypt: bool,
}

pub const CATALOG: &[Release] = &[
    Release {
        version_label: "8.1.0",
        loader: LoaderVariant::V1,
        section_size: 0x6_0000,
        clear_after_decrypt: false,
    },
    Release {
        version_label: "9.5.0",
        loader: LoaderVariant::V1,
        section_size: 0x5_8000,
        clear_after_decrypt: true,
    },
    Release {
        version_label: "9.6.0",
        loader: LoaderVariant::V2,
        section_size: 0x5_4000,
        clear_after_decrypt: false,
    },
    Release {
        version_label: "10.0.0",
        loader: LoaderVariant::V2,
        section_size: 0x5_0000,
        clear_after_decrypt: false,
    },
    Release {
        version_label: "10.2.0",
        loader: LoaderVariant::V2,
        section_size: 0x4_0000,
        clear_after_decrypt: false,
    },
    Release {
        version_label: "11.0.0",
        loader: LoaderVariant::V2,
        section_size: 0x4_8000,
        clear_after_decrypt: false,
    },
];

pub fn release(version_label: &str) -> Option<&'static Release> {
    CATALOG.iter().find(|r| r.version_label == version_label)
}

#[derive(Debug, thiserror::Error)]
pub enum VendorError {
    #[error(transparent)]
    Firm(#[from] FirmError),
    #[error(transparent)]
    Console(#[from] ConsoleError),
    #[error("crafting the vulnerable release failed: {0}")]
    Craft(#[from] Box<AttackError>),
    #[error("unknown release `{0}`")]
    UnknownRelease(String),
}

/// How a build picks its CTR nonce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoncePolicy {
    /// Hash of the version label.
    Derived,
    /// Searched so that Key #1 turns the entry word into a branch into
    /// `window`.
    Vulnerable { window: Range<u32>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseSpec {
    pub version_label: String,
    pub loader: LoaderVariant,
    pub section_size: u32,
    pub clear_after_decrypt: bool,
    pub nonce: NoncePolicy,
}

impl ReleaseSpec {
    pub fn catalog(version_label: &str) -> Option<Self> {
        let r = release(version_label)?;
        let nonce = if r.version_label == VULNERABLE_VERSION {
            NoncePolicy::Vulnerable {
                window: VULNERABLE_TARGET..VULNERABLE_TARGET + 4 * VULNERABLE_WINDOW_WORDS,
                seed: VULNERABLE_NONCE_SEED,
            }
        } else {
            NoncePolicy::Derived
        };
        Some(Self {
            version_label: r.version_label.to_string(),
            loader: r.loader,
            section_size: r.section_size,
            clear_after_decrypt: r.clear_after_decrypt,
            nonce,
        })
    }

    pub fn custom(version_label: &str, loader: LoaderVariant, section_size: u32) -> Self {
        Self::catalog(version_label)
            .filter(|s| s.loader == loader && s.section_size == section_size)
            .unwrap_or_else(|| Self {
                version_label: version_label.to_string(),
                loader,
                section_size,
                clear_after_decrypt: false,
                nonce: NoncePolicy::Derived,
            })
    }

    pub fn entrypoint(&self) -> u32 {
        section_load_addr() + ENTRY_OFFSET
    }
}

/// Catalog sections sit right behind the header in the load buffer, so the
/// loader decrypts them in place.
pub fn section_load_addr() -> u32 {
    FIRM_LOAD_BASE + HEADER_LEN as u32
}

/// Deterministic stand-in for a firmware binary: noise with the entry
/// prologue at the entrypoint.
pub fn code_plaintext(version_label: &str, section_size: u32) -> Vec<u8> {
    let seed = crypto::sha256(format!("code:{version_label}").as_bytes());
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut code = vec![0u8; section_size as usize];
    rng.fill_bytes(&mut code);
    let at = ENTRY_OFFSET as usize;
    if code.len() >= at + 16 {
        code[at..at + 16].copy_from_slice(&entry_marker_bytes());
    }
    code
}

pub struct Vendor {
    seed: u64,
    signer: VendorSigningKey,
    keysector: Keysector,
    rodata_key: Key,
    built: Mutex<BTreeMap<String, FirmImage>>,
}

impl std::fmt::Debug for Vendor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vendor").field("seed", &self.seed).finish_non_exhaustive()
    }
}

impl Vendor {
    pub fn generate(seed: u64) -> Result<Self, VendorError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let signer = VendorSigningKey::generate(&mut rng)?;
        let mut blocks = [[0u8; 16]; KEYSECTOR_BLOCKS];
        for b in blocks.iter_mut() {
            rng.fill_bytes(b);
        }
        Ok(Self {
            seed,
            signer,
            keysector: Keysector(blocks),
            rodata_key: rng.gen(),
            built: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn public_key(&self) -> VendorPublicKey {
        self.signer.public_key()
    }

    pub fn signing_key(&self) -> &VendorSigningKey {
        &self.signer
    }

    /// Keysector plaintext; identical on every console this vendor ships.
    pub fn keysector_plaintext(&self) -> &Keysector {
        &self.keysector
    }

    /// Keysector Key #`number`, 1-based.
    pub fn key(&self, number: u8) -> Key {
        self.keysector.0[number as usize - 1]
    }

    /// Expected AES(Key #1, zero block), embedded in every loader.
    pub fn key1_check(&self) -> Block {
        crypto::encrypt_block(&crypto::cipher(&self.key(1)), &[0; 16])
    }

    fn nonce_for(&self, spec: &ReleaseSpec, code: &[u8]) -> Result<Block, VendorError> {
        match &spec.nonce {
            NoncePolicy::Derived => {
                let d = crypto::sha256(format!("ctr:{}", spec.version_label).as_bytes());
                Ok(crypto::key_from_digest(&d))
            }
            NoncePolicy::Vulnerable { window, seed } => {
                let found = find_vulnerable_nonce(
                    &NonceQuery {
                        code_plaintext: code,
                        key1: self.key(1),
                        key2: self.key(2),
                        section_load_addr: section_load_addr(),
                        entry_offset: ENTRY_OFFSET,
                        window: window.clone(),
                    },
                    *seed,
                    None,
                )
                .map_err(Box::new)?;
                Ok(found.nonce)
            }
        }
    }

    /// Builds and signs a release. The first loader decrypts with Key #1,
    /// the second with Key #2.
    pub fn build(&self, spec: &ReleaseSpec) -> Result<FirmImage, VendorError> {
        let code = code_plaintext(&spec.version_label, spec.section_size);
        let key_number = match spec.loader {
            LoaderVariant::V1 => 1,
            LoaderVariant::V2 => 2,
        };
        let nonce = self.nonce_for(spec, &code)?;
        Ok(build_firm(
            &FirmBuild {
                version_label: &spec.version_label,
                loader_variant: spec.loader,
                clear_after_decrypt: spec.clear_after_decrypt,
                code_plaintext: &code,
                section_load_addr: section_load_addr(),
                entrypoint: spec.entrypoint(),
                payload_key: self.key(key_number),
                payload_key_number: key_number,
                ctr_nonce: nonce,
                key1_check: self.key1_check(),
                rodata_key: self.rodata_key,
            },
            &self.signer,
        )?)
    }

    /// Catalog release, built once and cached.
    pub fn release(&self, version_label: &str) -> Result<FirmImage, VendorError> {
        if let Some(img) = self.built.lock().unwrap().get(version_label) {
            return Ok(img.clone());
        }
        let spec = ReleaseSpec::catalog(version_label)
            .ok_or_else(|| VendorError::UnknownRelease(version_label.to_string()))?;
        let img = self.build(&spec)?;
        self.built
            .lock()
            .unwrap()
            .insert(version_label.to_string(), img.clone());
        Ok(img)
    }

    /// A new console with random OTP, its keysector wrapped under the OTP
    /// hash, and the factory release in both FIRM partitions. Comes out
    /// powered off.
    pub fn manufacture(&self, console_seed: u64) -> Result<Console, VendorError> {
        let mut rng = ChaCha20Rng::seed_from_u64(console_seed);
        let mut otp = [0u8; OTP_LEN];
        rng.fill_bytes(&mut otp);
        let mut console = Console::new(otp, NandImage::default(), self.public_key(), self.seed);
        let otp_key = crypto::key_from_digest(&crypto::sha256(&otp));
        let wrapped = crypto::ecb_with_key(&otp_key, true, &self.keysector.to_bytes());
        console.nand_mut().set_keysector(&Keysector::from_sector(&wrapped));
        let factory = self.release(FACTORY_VERSION)?.to_bytes();
        for slot in FirmSlot::ALL {
            console.install_firm(slot, &factory)?;
        }
        console.reboot(RebootMode::Cold);
        Ok(console)
    }
}
