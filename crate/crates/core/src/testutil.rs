use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::firm::VendorSigningKey;
use crate::vendor::Vendor;

pub(crate) fn test_signer() -> &'static VendorSigningKey {
    static SIGNER: OnceLock<VendorSigningKey> = OnceLock::new();
    SIGNER.get_or_init(|| VendorSigningKey::generate(&mut ChaCha20Rng::seed_from_u64(0x5157)).unwrap())
}

pub(crate) fn test_vendor() -> &'static Vendor {
    static VENDOR: OnceLock<Vendor> = OnceLock::new();
    VENDOR.get_or_init(|| Vendor::generate(crate::vendor::DEFAULT_VENDOR_SEED).unwrap())
}
