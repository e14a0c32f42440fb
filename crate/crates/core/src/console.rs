//! One simulated console: hardware state, NAND and the vendor key burned
//! into its boot ROM.
//!
//! The console file stores the whole machine between CLI invocations, RAM
//! residue and SHA latch included, so consecutive warm boots behave like
//! one powered session. Keyslots are never written out.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::bootchain::{
    boot_rom_run, derive_partition_key, partition_nonce, BootReport, DEFAULT_CLOBBER_LEN,
    DEFAULT_STEP_LIMIT, PARTITION_KEYSLOT,
};
use crate::firm::VendorPublicKey;
use crate::hw::{
    AesEngine, Hook, HookAction, HwError, MemoryMap, OtpRegion, ShaEngine, ITCM_LEN, OTP_LEN,
};
use crate::nand::{FirmSlot, NandError, NandImage};

const MAGIC: &[u8; 16] = b"BOOTSHUFFLE-CONS";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RebootMode {
    /// Reset without power loss: RAM keeps its contents.
    Warm,
    /// Power cycle: RAM and ITCM come back zeroed.
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsoleConfig {
    /// Bytes past the loaded FIRM the loader overwrites before jumping.
    pub clobber_len: u32,
    pub step_limit: u64,
}

impl Default for ConsoleConfig {
    fn default() -> Self {
        Self {
            clobber_len: DEFAULT_CLOBBER_LEN,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

/// Counters since the last reboot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BootStats {
    pub firm_reads: [u32; 2],
}

impl BootStats {
    pub(crate) fn record_read(&mut self, slot: FirmSlot) {
        self.firm_reads[slot as usize] += 1;
    }

    pub fn reads(&self, slot: FirmSlot) -> u32 {
        self.firm_reads[slot as usize]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConsoleError {
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error("corrupt console file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Console {
    pub(crate) otp: OtpRegion,
    pub(crate) aes: AesEngine,
    pub(crate) sha: ShaEngine,
    pub(crate) memory: MemoryMap,
    pub(crate) nand: NandImage,
    pub(crate) vendor_key: VendorPublicKey,
    pub(crate) config: ConsoleConfig,
    pub(crate) stats: BootStats,
    vendor_seed: u64,
}

impl Console {
    /// A powered-off console. Call [`Console::reboot`] or just boot it.
    pub fn new(otp: [u8; OTP_LEN], nand: NandImage, vendor_key: VendorPublicKey, vendor_seed: u64) -> Self {
        Self {
            otp: OtpRegion::new(otp),
            aes: AesEngine::default(),
            sha: ShaEngine::default(),
            memory: MemoryMap::default(),
            nand,
            vendor_key,
            config: ConsoleConfig::default(),
            stats: BootStats::default(),
            vendor_seed,
        }
    }

    /// Seed of the vendor whose key this console trusts.
    pub fn vendor_seed(&self) -> u64 {
        self.vendor_seed
    }

    pub fn otp_read(&self) -> Result<&[u8; OTP_LEN], HwError> {
        self.otp.read()
    }

    /// Writes CFG_SYSPROT9; the lock holds until the next reboot.
    pub fn set_sysprot9(&mut self) {
        self.otp.lock();
    }

    pub fn otp_locked(&self) -> bool {
        self.otp.is_locked()
    }

    pub fn aes(&self) -> &AesEngine {
        &self.aes
    }

    pub fn aes_mut(&mut self) -> &mut AesEngine {
        &mut self.aes
    }

    pub fn sha(&self) -> &ShaEngine {
        &self.sha
    }

    pub fn memory(&self) -> &MemoryMap {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut MemoryMap {
        &mut self.memory
    }

    pub fn nand(&self) -> &NandImage {
        &self.nand
    }

    pub fn nand_mut(&mut self) -> &mut NandImage {
        &mut self.nand
    }

    pub fn vendor_key(&self) -> &VendorPublicKey {
        &self.vendor_key
    }

    pub fn config(&self) -> ConsoleConfig {
        self.config
    }

    pub fn set_config(&mut self, config: ConsoleConfig) {
        self.config = config;
    }

    pub fn stats(&self) -> BootStats {
        self.stats
    }

    /// Resets the SoC. Keyslots empty and the OTP unlocks either way. A warm
    /// reset keeps RAM and the SHA latch; payload hooks are bookkeeping and
    /// survive both.
    pub fn reboot(&mut self, mode: RebootMode) {
        self.otp.reset();
        self.aes.reset();
        self.stats = BootStats::default();
        if mode == RebootMode::Cold {
            self.memory.zero();
            self.sha.clear_latch();
        }
    }

    /// Reboots, then runs the boot chain.
    pub fn boot(&mut self, mode: RebootMode) -> BootReport {
        self.reboot(mode);
        boot_rom_run(self)
    }

    /// Runs the boot chain from the current state without a reset.
    pub fn run_boot_rom(&mut self) -> BootReport {
        boot_rom_run(self)
    }

    /// Loads the partition key the same way the boot ROM does. Needs the OTP
    /// unlocked unless the key is already in its slot.
    pub fn ensure_partition_key(&mut self) -> Result<(), HwError> {
        if self.aes.is_loaded(PARTITION_KEYSLOT) {
            return Ok(());
        }
        let itcm: [u8; ITCM_LEN] = self.otp.read()?[..ITCM_LEN].try_into().unwrap();
        let key = zeroize::Zeroizing::new(derive_partition_key(&itcm));
        self.aes.set_keyslot(PARTITION_KEYSLOT, &key)
    }

    /// Encrypts a plaintext FIRM container for its partition and writes it.
    pub fn install_firm(&mut self, slot: FirmSlot, firm_bytes: &[u8]) -> Result<(), ConsoleError> {
        self.ensure_partition_key()?;
        let span = self.nand.partition(slot);
        if firm_bytes.len() > span.byte_len() {
            return Err(NandError::PartitionOverflow {
                slot,
                len: firm_bytes.len(),
                capacity: span.byte_len(),
            }
            .into());
        }
        let ct = self
            .aes
            .ctr(PARTITION_KEYSLOT, &partition_nonce(span.byte_offset()), firm_bytes)?;
        self.nand.write_partition(slot, &ct)?;
        Ok(())
    }

    /// Decrypts a partition back to plaintext, padding included.
    pub fn read_firm(&mut self, slot: FirmSlot) -> Result<Vec<u8>, ConsoleError> {
        self.ensure_partition_key()?;
        let span = self.nand.partition(slot);
        Ok(self.aes.ctr(
            PARTITION_KEYSLOT,
            &partition_nonce(span.byte_offset()),
            self.nand.read_partition(slot),
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.write_u64::<LE>(self.vendor_seed).unwrap();
        out.extend_from_slice(self.otp.raw());
        let n = self.vendor_key.modulus_be();
        out.write_u16::<LE>(n.len() as u16).unwrap();
        out.extend_from_slice(&n);
        out.write_u32::<LE>(self.vendor_key.exponent()).unwrap();
        out.write_u32::<LE>(self.config.clobber_len).unwrap();
        out.write_u64::<LE>(self.config.step_limit).unwrap();
        match self.sha.read_latch() {
            Ok(d) => {
                out.push(1);
                out.extend_from_slice(&d);
            }
            Err(_) => {
                out.push(0);
                out.extend_from_slice(&[0; 32]);
            }
        }
        out.extend_from_slice(self.memory.itcm());
        out.write_u32::<LE>(self.memory.base()).unwrap();
        out.write_u32::<LE>(self.memory.size()).unwrap();
        out.extend_from_slice(self.memory.raw());
        out.write_u32::<LE>(self.memory.hooks().len() as u32).unwrap();
        for h in self.memory.hooks() {
            out.write_u16::<LE>(h.id.len() as u16).unwrap();
            out.extend_from_slice(h.id.as_bytes());
            out.write_u32::<LE>(h.start).unwrap();
            out.write_u32::<LE>(h.len).unwrap();
            out.extend_from_slice(&h.digest);
            out.push(match h.action {
                HookAction::DumpShaHash => 0,
                HookAction::Marker => 1,
            });
        }
        let nand = self.nand.to_bytes();
        out.write_u64::<LE>(nand.len() as u64).unwrap();
        out.extend_from_slice(&nand);
        out
    }

    /// Restores a saved console. It comes back as if just reset: OTP
    /// unlocked, keyslots empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ConsoleError> {
        let corrupt = |m: &str| ConsoleError::Corrupt(m.to_string());
        let mut r = Cursor::new(bytes);
        let eof = |_| corrupt("unexpected end of file");

        let mut magic = [0u8; 16];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if r.read_u8().map_err(eof)? != FORMAT_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let vendor_seed = r.read_u64::<LE>().map_err(eof)?;
        let mut otp = [0u8; OTP_LEN];
        r.read_exact(&mut otp).map_err(eof)?;
        let n_len = r.read_u16::<LE>().map_err(eof)? as usize;
        let mut n = vec![0u8; n_len];
        r.read_exact(&mut n).map_err(eof)?;
        let e = r.read_u32::<LE>().map_err(eof)?;
        let vendor_key =
            VendorPublicKey::from_parts(&n, e).map_err(|err| ConsoleError::Corrupt(err.to_string()))?;
        let config = ConsoleConfig {
            clobber_len: r.read_u32::<LE>().map_err(eof)?,
            step_limit: r.read_u64::<LE>().map_err(eof)?,
        };
        let has_latch = r.read_u8().map_err(eof)?;
        let mut latch = [0u8; 32];
        r.read_exact(&mut latch).map_err(eof)?;
        let mut itcm = [0u8; ITCM_LEN];
        r.read_exact(&mut itcm).map_err(eof)?;
        let base = r.read_u32::<LE>().map_err(eof)?;
        let size = r.read_u32::<LE>().map_err(eof)? as usize;
        if size > bytes.len() {
            return Err(corrupt("RAM size exceeds file"));
        }
        let mut ram = vec![0u8; size];
        r.read_exact(&mut ram).map_err(eof)?;
        let hook_count = r.read_u32::<LE>().map_err(eof)?;
        let mut hooks = Vec::new();
        for _ in 0..hook_count {
            let id_len = r.read_u16::<LE>().map_err(eof)? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id).map_err(eof)?;
            let id = String::from_utf8(id).map_err(|_| corrupt("hook id is not UTF-8"))?;
            let start = r.read_u32::<LE>().map_err(eof)?;
            let len = r.read_u32::<LE>().map_err(eof)?;
            let mut digest = [0u8; 32];
            r.read_exact(&mut digest).map_err(eof)?;
            let action = match r.read_u8().map_err(eof)? {
                0 => HookAction::DumpShaHash,
                1 => HookAction::Marker,
                _ => return Err(corrupt("unknown hook action")),
            };
            hooks.push(Hook {
                id,
                start,
                len,
                digest,
                action,
            });
        }
        let nand_len = r.read_u64::<LE>().map_err(eof)? as usize;
        let pos = r.position() as usize;
        if bytes.len() - pos != nand_len {
            return Err(corrupt("NAND length does not match file"));
        }
        let nand = NandImage::from_bytes(&bytes[pos..])?;

        let mut sha = ShaEngine::default();
        sha.restore_latch((has_latch == 1).then_some(latch));
        Ok(Self {
            otp: OtpRegion::new(otp),
            aes: AesEngine::default(),
            sha,
            memory: MemoryMap::from_parts(base, ram, itcm, hooks),
            nand,
            vendor_key,
            config,
            stats: BootStats::default(),
            vendor_seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConsoleError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConsoleError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
