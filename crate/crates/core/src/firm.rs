//! The simulator's FIRM container: one header, one CTR-encrypted ARM9
//! section, and an RSA-2048 PKCS#1 v1.5 signature over both.
//!
//! Serialized layout (little-endian integers, all offsets from the start):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0x00   | 4    | magic `FIRM`                            |
//! | 0x04   | 8    | version label, ASCII, NUL padded        |
//! | 0x0c   | 1    | loader variant (1 or 2)                 |
//! | 0x0d   | 1    | flags (bit 0: clear keyslot 0x11 after decrypt) |
//! | 0x0e   | 1    | keysector key number used for the section |
//! | 0x0f   | 1    | reserved, zero                          |
//! | 0x10   | 4    | entrypoint                              |
//! | 0x14   | 4    | section load address                    |
//! | 0x18   | 4    | section size                            |
//! | 0x1c   | 16   | CTR nonce                               |
//! | 0x2c   | 16   | Key #1 check value (AES of zero block)  |
//! | 0x3c   | 16   | loader read-only key, XOR masked        |
//! | 0x4c   | 52   | reserved, zero                          |
//! | 0x80   | n    | section ciphertext                      |
//! | 0x80+n | 256  | signature                               |
//!
//! Anything after the signature is ignored by the parser and is outside the
//! signed region.

use rsa::traits::PublicKeyParts;
use rsa::{BigUint, Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{self, Block, Key};

pub const HEADER_LEN: usize = 0x80;
pub const SIGNATURE_LEN: usize = 256;
pub const MAGIC: &[u8; 4] = b"FIRM";

const LABEL_LEN: usize = 8;
const FLAG_CLEAR_AFTER_DECRYPT: u8 = 1;

/// Fixed mask hiding the loader's read-only key inside the header.
const RODATA_MASK: Key = [
    0x3d, 0x5a, 0x9c, 0x0f, 0x71, 0xe2, 0x48, 0xb6, 0x1d, 0xa7, 0x64, 0xc9, 0x05, 0x8e, 0xf3, 0x2b,
];

#[derive(Debug, Error)]
pub enum FirmError {
    #[error("bad magic, expected `FIRM`")]
    BadMagic,
    #[error("image truncated: need {needed:#x} bytes, have {found:#x}")]
    TruncatedImage { needed: usize, found: usize },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("entrypoint {entrypoint:#010x} is outside the section")]
    BadEntrypoint { entrypoint: u32 },
    #[error("section size {0:#x} is not a multiple of 4")]
    BadAlignment(usize),
    #[error("signing failed: {0}")]
    Signing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoaderVariant {
    V1,
    V2,
}

impl LoaderVariant {
    /// Loader generation shipped with a release: up to 9.5.0 used the
    /// first loader, 9.6.0 onwards the second.
    pub fn for_version(label: &str) -> Option<Self> {
        let v = parse_version(label)?;
        Some(if v <= (9, 5, 0) {
            LoaderVariant::V1
        } else {
            LoaderVariant::V2
        })
    }

    fn to_byte(self) -> u8 {
        match self {
            LoaderVariant::V1 => 1,
            LoaderVariant::V2 => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(LoaderVariant::V1),
            2 => Some(LoaderVariant::V2),
            _ => None,
        }
    }
}

impl std::str::FromStr for LoaderVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(LoaderVariant::V1),
            "v2" => Ok(LoaderVariant::V2),
            other => Err(format!("unknown loader variant `{other}`")),
        }
    }
}

fn parse_version(label: &str) -> Option<(u32, u32, u32)> {
    let mut it = label.split('.').map(|p| p.parse::<u32>().ok());
    let v = (it.next()??, it.next()??, it.next()??);
    it.next().is_none().then_some(v)
}

pub fn mask_rodata_key(key: &Key) -> Key {
    std::array::from_fn(|i| key[i] ^ RODATA_MASK[i])
}

pub fn unmask_rodata_key(masked: &Key) -> Key {
    mask_rodata_key(masked)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmHeader {
    pub version_label: String,
    pub loader_variant: LoaderVariant,
    /// Models the 9.5.0 partial fix to the first loader.
    pub clear_after_decrypt: bool,
    pub payload_key_number: u8,
    pub entrypoint: u32,
    pub section_load_addr: u32,
    pub section_size: u32,
    pub ctr_nonce: Block,
    pub key1_check: Block,
    pub masked_rodata_key: Key,
}

impl FirmHeader {
    pub fn entry_offset(&self) -> u32 {
        self.entrypoint - self.section_load_addr
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(MAGIC);
        h[4..4 + self.version_label.len()].copy_from_slice(self.version_label.as_bytes());
        h[0x0c] = self.loader_variant.to_byte();
        h[0x0d] = if self.clear_after_decrypt {
            FLAG_CLEAR_AFTER_DECRYPT
        } else {
            0
        };
        h[0x0e] = self.payload_key_number;
        h[0x10..0x14].copy_from_slice(&self.entrypoint.to_le_bytes());
        h[0x14..0x18].copy_from_slice(&self.section_load_addr.to_le_bytes());
        h[0x18..0x1c].copy_from_slice(&self.section_size.to_le_bytes());
        h[0x1c..0x2c].copy_from_slice(&self.ctr_nonce);
        h[0x2c..0x3c].copy_from_slice(&self.key1_check);
        h[0x3c..0x4c].copy_from_slice(&self.masked_rodata_key);
        h
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FirmError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(FirmError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(FirmError::TruncatedImage {
                needed: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let bad = |m: &str| FirmError::BadHeader(m.to_string());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let block_at = |o: usize| -> Block { bytes[o..o + 16].try_into().unwrap() };

        let raw_label = &bytes[4..4 + LABEL_LEN];
        let label_len = raw_label.iter().position(|&b| b == 0).unwrap_or(LABEL_LEN);
        if raw_label[label_len..].iter().any(|&b| b != 0) {
            return Err(bad("version label has bytes after its terminator"));
        }
        let label = std::str::from_utf8(&raw_label[..label_len])
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_graphic()))
            .ok_or_else(|| bad("version label is not printable ASCII"))?;
        let loader_variant =
            LoaderVariant::from_byte(bytes[0x0c]).ok_or_else(|| bad("unknown loader variant"))?;
        let flags = bytes[0x0d];
        if flags & !FLAG_CLEAR_AFTER_DECRYPT != 0 {
            return Err(bad("unknown flag bits"));
        }
        let payload_key_number = bytes[0x0e];
        if !(1..=32).contains(&payload_key_number) {
            return Err(bad("payload key number outside 1..=32"));
        }
        if bytes[0x0f] != 0 || bytes[0x4c..HEADER_LEN].iter().any(|&b| b != 0) {
            return Err(bad("reserved bytes are not zero"));
        }
        let header = FirmHeader {
            version_label: label.to_string(),
            loader_variant,
            clear_after_decrypt: flags & FLAG_CLEAR_AFTER_DECRYPT != 0,
            payload_key_number,
            entrypoint: u32_at(0x10),
            section_load_addr: u32_at(0x14),
            section_size: u32_at(0x18),
            ctr_nonce: block_at(0x1c),
            key1_check: block_at(0x2c),
            masked_rodata_key: block_at(0x3c),
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> Result<(), FirmError> {
        if self.version_label.is_empty() || self.version_label.len() > LABEL_LEN {
            return Err(FirmError::BadHeader(format!(
                "version label `{}` must be 1..=8 bytes",
                self.version_label
            )));
        }
        if !self.section_size.is_multiple_of(4) {
            return Err(FirmError::BadAlignment(self.section_size as usize));
        }
        let end = self.section_load_addr as u64 + self.section_size as u64;
        if (self.entrypoint as u64) < self.section_load_addr as u64
            || self.entrypoint as u64 >= end
            || !self.entrypoint.is_multiple_of(4)
        {
            return Err(FirmError::BadEntrypoint {
                entrypoint: self.entrypoint,
            });
        }
        Ok(())
    }

    /// Serialized length of a container carrying this header.
    pub fn container_len(&self) -> usize {
        HEADER_LEN + self.section_size as usize + SIGNATURE_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmImage {
    pub header: FirmHeader,
    pub section_ciphertext: Vec<u8>,
    pub signature: Vec<u8>,
}

/// Everything the vendor tooling needs to produce a signed image.
#[derive(Debug, Clone)]
pub struct FirmBuild<'a> {
    pub version_label: &'a str,
    pub loader_variant: LoaderVariant,
    pub clear_after_decrypt: bool,
    pub code_plaintext: &'a [u8],
    pub section_load_addr: u32,
    pub entrypoint: u32,
    /// Keysector key that decrypts the section (Key #2 for the second loader).
    pub payload_key: Key,
    pub payload_key_number: u8,
    pub ctr_nonce: Block,
    pub key1_check: Block,
    pub rodata_key: Key,
}

pub fn build_firm(spec: &FirmBuild<'_>, signer: &VendorSigningKey) -> Result<FirmImage, FirmError> {
    if !spec.code_plaintext.len().is_multiple_of(4) {
        return Err(FirmError::BadAlignment(spec.code_plaintext.len()));
    }
    let header = FirmHeader {
        version_label: spec.version_label.to_string(),
        loader_variant: spec.loader_variant,
        clear_after_decrypt: spec.clear_after_decrypt,
        payload_key_number: spec.payload_key_number,
        entrypoint: spec.entrypoint,
        section_load_addr: spec.section_load_addr,
        section_size: u32::try_from(spec.code_plaintext.len())
            .map_err(|_| FirmError::BadHeader("section too large".into()))?,
        ctr_nonce: spec.ctr_nonce,
        key1_check: spec.key1_check,
        masked_rodata_key: mask_rodata_key(&spec.rodata_key),
    };
    header.validate()?;
    if !(1..=32).contains(&spec.payload_key_number) {
        return Err(FirmError::BadHeader("payload key number outside 1..=32".into()));
    }
    let section_ciphertext = firm_ctr_crypt(spec.code_plaintext, &spec.payload_key, &spec.ctr_nonce);
    let mut image = FirmImage {
        header,
        section_ciphertext,
        signature: Vec::new(),
    };
    image.signature = signer.sign(&image.signed_digest())?;
    Ok(image)
}

/// CTR over firmware bytes with an explicit key. Same keystream as the
/// hardware engine produces for a slot holding `key`.
pub fn firm_ctr_crypt(data: &[u8], key: &Key, nonce: &Block) -> Vec<u8> {
    crypto::ctr_with_key(key, nonce, data)
}

impl FirmImage {
    pub fn container_len(&self) -> usize {
        self.header.container_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.container_len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.section_ciphertext);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FirmError> {
        let header = FirmHeader::parse(bytes)?;
        let needed = header.container_len();
        if bytes.len() < needed {
            return Err(FirmError::TruncatedImage {
                needed,
                found: bytes.len(),
            });
        }
        let sig_at = HEADER_LEN + header.section_size as usize;
        Ok(FirmImage {
            section_ciphertext: bytes[HEADER_LEN..sig_at].to_vec(),
            signature: bytes[sig_at..needed].to_vec(),
            header,
        })
    }

    /// SHA-256 over header ‖ section ciphertext.
    pub fn signed_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.header.to_bytes());
        h.update(&self.section_ciphertext);
        h.finalize().into()
    }

    pub fn verify_signature(&self, key: &VendorPublicKey) -> bool {
        self.signature.len() == SIGNATURE_LEN
            && key
                .0
                .verify(Pkcs1v15Sign::new::<Sha256>(), &self.signed_digest(), &self.signature)
                .is_ok()
    }

    pub fn decrypt_section(&self, key: &Key) -> Vec<u8> {
        firm_ctr_crypt(&self.section_ciphertext, key, &self.header.ctr_nonce)
    }
}

/// Parses raw bytes and checks the signature; anything malformed is simply
/// not valid.
pub fn verify_signature(bytes: &[u8], key: &VendorPublicKey) -> bool {
    FirmImage::parse(bytes).is_ok_and(|img| img.verify_signature(key))
}

/// The vendor's burned-in verification key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VendorPublicKey(pub(crate) RsaPublicKey);

impl VendorPublicKey {
    pub fn modulus_be(&self) -> Vec<u8> {
        self.0.n().to_bytes_be()
    }

    pub fn exponent(&self) -> u32 {
        let e = self.0.e().to_bytes_be();
        e.iter().fold(0u32, |acc, &b| (acc << 8) | b as u32)
    }

    pub fn from_parts(modulus_be: &[u8], exponent: u32) -> Result<Self, FirmError> {
        RsaPublicKey::new(BigUint::from_bytes_be(modulus_be), BigUint::from(exponent))
            .map(VendorPublicKey)
            .map_err(|e| FirmError::Signing(e.to_string()))
    }
}

/// The vendor's private signing key. Lives only in fixture tooling.
#[derive(Clone)]
pub struct VendorSigningKey(RsaPrivateKey);

impl std::fmt::Debug for VendorSigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VendorSigningKey(..)")
    }
}

impl VendorSigningKey {
    pub fn generate<R: rand::CryptoRng + rand::RngCore>(rng: &mut R) -> Result<Self, FirmError> {
        RsaPrivateKey::new(rng, 2048)
            .map(VendorSigningKey)
            .map_err(|e| FirmError::Signing(e.to_string()))
    }

    pub fn public_key(&self) -> VendorPublicKey {
        VendorPublicKey(self.0.to_public_key())
    }

    fn sign(&self, digest: &[u8; 32]) -> Result<Vec<u8>, FirmError> {
        self.0
            .sign(Pkcs1v15Sign::new::<Sha256>(), digest)
            .map_err(|e| FirmError::Signing(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::test_signer;
    use proptest::prelude::*;

    const LOAD: u32 = 0x0800_6080;

    fn sample_code(len: usize) -> Vec<u8> {
        (0..len as u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect()
    }

    fn build(code: &[u8], entrypoint: u32) -> Result<FirmImage, FirmError> {
        build_firm(
            &FirmBuild {
                version_label: "10.2.0",
                loader_variant: LoaderVariant::V2,
                clear_after_decrypt: false,
                code_plaintext: code,
                section_load_addr: LOAD,
                entrypoint,
                payload_key: [0x22; 16],
                payload_key_number: 2,
                ctr_nonce: [0x10; 16],
                key1_check: [0x11; 16],
                rodata_key: [0x18; 16],
            },
            test_signer(),
        )
    }

    fn sample() -> FirmImage {
        build(&sample_code(0x400), LOAD + 0x100).unwrap()
    }

    #[test]
    fn correct_key_recovers_code() {
        let img = sample();
        assert_eq!(img.decrypt_section(&[0x22; 16]), sample_code(0x400));
    }

    #[test]
    fn wrong_key_is_keystream_algebra() {
        let img = sample();
        let wrong = img.decrypt_section(&[0x11; 16]);
        let code = sample_code(0x400);
        // oracle: pt ^ ks(K2) ^ ks(K'), keystreams computed block by block
        let (k2, kw) = (crypto::cipher(&[0x22; 16]), crypto::cipher(&[0x11; 16]));
        for (i, chunk) in wrong.chunks(16).enumerate() {
            let a = crypto::keystream_block(&k2, &[0x10; 16], i as u64);
            let b = crypto::keystream_block(&kw, &[0x10; 16], i as u64);
            for j in 0..16 {
                assert_eq!(chunk[j], code[i * 16 + j] ^ a[j] ^ b[j]);
            }
        }
        let off = 0x100;
        assert_ne!(wrong[off..off + 4], code[off..off + 4]);
        assert_eq!(img.decrypt_section(&[0x11; 16]), wrong);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        assert!(matches!(
            build(&sample_code(0x400), LOAD + 0x400),
            Err(FirmError::BadEntrypoint { .. })
        ));
        assert!(matches!(
            build(&sample_code(0x400), LOAD - 4),
            Err(FirmError::BadEntrypoint { .. })
        ));
        assert!(matches!(
            build(&sample_code(0x3fe), LOAD),
            Err(FirmError::BadAlignment(0x3fe))
        ));
    }

    #[test]
    fn parse_roundtrip_and_trailing_bytes() {
        let img = sample();
        let mut bytes = img.to_bytes();
        assert_eq!(FirmImage::parse(&bytes).unwrap(), img);
        bytes.extend_from_slice(&[0xcc; 0x400]);
        assert_eq!(FirmImage::parse(&bytes).unwrap(), img);
    }

    #[test]
    fn parse_framing_errors() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            FirmImage::parse(&bytes[..bytes.len() - 1]),
            Err(FirmError::TruncatedImage { .. })
        ));
        assert!(matches!(
            FirmImage::parse(&bytes[..0x20]),
            Err(FirmError::TruncatedImage { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(FirmImage::parse(&bytes), Err(FirmError::BadMagic)));
    }

    #[test]
    fn signature_checks() {
        let key = test_signer().public_key();
        let img = sample();
        assert!(img.verify_signature(&key));
        let mut bytes = img.to_bytes();
        bytes.extend_from_slice(&[0u8; 0x190]);
        bytes.extend_from_slice(b"payload");
        assert!(verify_signature(&bytes, &key));
        let mut flipped = img.to_bytes();
        flipped[HEADER_LEN + 7] ^= 1;
        assert!(!verify_signature(&flipped, &key));
        assert!(!verify_signature(b"FIRM", &key));
    }

    #[test]
    fn public_key_parts_roundtrip() {
        let key = test_signer().public_key();
        let back = VendorPublicKey::from_parts(&key.modulus_be(), key.exponent()).unwrap();
        assert_eq!(back, key);
    }

    #[test]
    fn ctr_crypt_matches_engine() {
        let mut engine = crate::hw::AesEngine::default();
        engine.set_keyslot(0x11, &[9; 16]).unwrap();
        let data = sample_code(333);
        assert_eq!(
            firm_ctr_crypt(&data, &[9; 16], &[4; 16]),
            engine.ctr(0x11, &[4; 16], &data).unwrap()
        );
    }

    #[test]
    fn variant_by_version() {
        assert_eq!(LoaderVariant::for_version("8.1.0"), Some(LoaderVariant::V1));
        assert_eq!(LoaderVariant::for_version("9.5.0"), Some(LoaderVariant::V1));
        assert_eq!(LoaderVariant::for_version("9.6.0"), Some(LoaderVariant::V2));
        assert_eq!(LoaderVariant::for_version("10.2.0"), Some(LoaderVariant::V2));
        assert_eq!(LoaderVariant::for_version("10.x"), None);
    }

    #[test]
    fn rodata_mask_is_involutive() {
        let k = [0x42; 16];
        assert_ne!(mask_rodata_key(&k), k);
        assert_eq!(unmask_rodata_key(&mask_rodata_key(&k)), k);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn signed_byte_mutations_invalidate(pos in 0usize..(HEADER_LEN + 0x400), bit in 0u8..8) {
            let key = test_signer().public_key();
            let mut bytes = sample().to_bytes();
            bytes[pos] ^= 1 << bit;
            prop_assert!(!verify_signature(&bytes, &key));
        }

        #[test]
        fn appends_keep_signature(tail in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let key = test_signer().public_key();
            let mut bytes = sample().to_bytes();
            bytes.extend_from_slice(&tail);
            prop_assert!(verify_signature(&bytes, &key));
        }

        #[test]
        fn ctr_crypt_involution(data in proptest::collection::vec(any::<u8>(), 0..512),
                                key in any::<[u8; 16]>(), nonce in any::<[u8; 16]>()) {
            let once = firm_ctr_crypt(&data, &key, &nonce);
            prop_assert_eq!(firm_ctr_crypt(&once, &key, &nonce), data);
        }
    }
}
