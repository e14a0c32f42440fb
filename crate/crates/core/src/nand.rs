//! NAND flash as a flat store of 0x200-byte sectors.
//!
//! Sector 0x96 holds the keysector; two FIRM partitions hold the redundant
//! firmware copies. The NAND layer only ever sees ciphertext.
//!
//! On-disk image layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0x00   | 16   | magic `BOOTSHUFFLE-NAND`      |
//! | 0x10   | 1    | format version (1)            |
//! | 0x11   | 4    | sector count                  |
//! | 0x15   | 16   | FIRM0 start, count; FIRM1 start, count |
//! | 0x25   | n·0x200 | raw sectors                |

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Block;

pub const SECTOR_LEN: usize = 0x200;
pub const KEYSECTOR_INDEX: u32 = 0x96;
pub const KEYSECTOR_BLOCKS: usize = SECTOR_LEN / 16;

pub const DEFAULT_SECTOR_COUNT: u32 = 0x2000;
pub const FIRM0_START: u32 = 0x100;
pub const FIRM1_START: u32 = 0x500;
pub const FIRM_SECTORS: u32 = 0x400;

const MAGIC: &[u8; 16] = b"BOOTSHUFFLE-NAND";
const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 16 + 1 + 4 + 16;

#[derive(Debug, Error)]
pub enum NandError {
    #[error("sector {0:#x} is out of range")]
    SectorOutOfRange(u32),
    #[error("sector data must be {SECTOR_LEN:#x} bytes, got {0:#x}")]
    BadSectorLength(usize),
    #[error("key number {0} is outside 1..=32")]
    KeyIndexOutOfRange(usize),
    #[error("{len:#x} bytes do not fit in {slot} ({capacity:#x} bytes)")]
    PartitionOverflow {
        slot: FirmSlot,
        len: usize,
        capacity: usize,
    },
    #[error("corrupt NAND image: {0}")]
    CorruptImage(String),
    #[error("NAND image I/O failed")]
    IoFailure(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirmSlot {
    Firm0,
    Firm1,
}

impl FirmSlot {
    pub const ALL: [FirmSlot; 2] = [FirmSlot::Firm0, FirmSlot::Firm1];

    fn index(self) -> usize {
        match self {
            FirmSlot::Firm0 => 0,
            FirmSlot::Firm1 => 1,
        }
    }
}

impl std::fmt::Display for FirmSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FirmSlot::Firm0 => "FIRM0",
            FirmSlot::Firm1 => "FIRM1",
        })
    }
}

impl std::str::FromStr for FirmSlot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "firm0" => Ok(FirmSlot::Firm0),
            "firm1" => Ok(FirmSlot::Firm1),
            other => Err(format!("unknown FIRM slot `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpan {
    pub start: u32,
    pub count: u32,
}

impl PartitionSpan {
    pub fn byte_offset(&self) -> usize {
        self.start as usize * SECTOR_LEN
    }

    pub fn byte_len(&self) -> usize {
        self.count as usize * SECTOR_LEN
    }

    fn end(&self) -> u32 {
        self.start + self.count
    }

    fn overlaps(&self, other: &PartitionSpan) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    fn contains_sector(&self, sector: u32) -> bool {
        sector >= self.start && sector < self.end()
    }
}

/// The 32 ciphertext blocks of sector 0x96. Key #N lives at index N-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Keysector(pub [Block; KEYSECTOR_BLOCKS]);

impl Keysector {
    pub fn from_sector(sector: &[u8]) -> Self {
        let mut blocks = [[0u8; 16]; KEYSECTOR_BLOCKS];
        for (b, chunk) in blocks.iter_mut().zip(sector.chunks_exact(16)) {
            b.copy_from_slice(chunk);
        }
        Keysector(blocks)
    }

    pub fn to_bytes(&self) -> [u8; SECTOR_LEN] {
        let mut out = [0u8; SECTOR_LEN];
        for (chunk, b) in out.chunks_exact_mut(16).zip(self.0.iter()) {
            chunk.copy_from_slice(b);
        }
        out
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct NandImage {
    sectors: Vec<u8>,
    partitions: [PartitionSpan; 2],
}

impl std::fmt::Debug for NandImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NandImage")
            .field("sectors", &self.sector_count())
            .field("partitions", &self.partitions)
            .finish()
    }
}

impl Default for NandImage {
    fn default() -> Self {
        Self::blank(
            DEFAULT_SECTOR_COUNT,
            [
                PartitionSpan {
                    start: FIRM0_START,
                    count: FIRM_SECTORS,
                },
                PartitionSpan {
                    start: FIRM1_START,
                    count: FIRM_SECTORS,
                },
            ],
        )
        .expect("default geometry is valid")
    }
}

impl NandImage {
    /// A zero-filled image with the given geometry.
    pub fn blank(sector_count: u32, partitions: [PartitionSpan; 2]) -> Result<Self, NandError> {
        validate_geometry(sector_count, &partitions)?;
        Ok(Self {
            sectors: vec![0; sector_count as usize * SECTOR_LEN],
            partitions,
        })
    }

    pub fn sector_count(&self) -> u32 {
        (self.sectors.len() / SECTOR_LEN) as u32
    }

    pub fn partition(&self, slot: FirmSlot) -> PartitionSpan {
        self.partitions[slot.index()]
    }

    pub fn read_sector(&self, index: u32) -> Result<&[u8], NandError> {
        if index >= self.sector_count() {
            return Err(NandError::SectorOutOfRange(index));
        }
        let off = index as usize * SECTOR_LEN;
        Ok(&self.sectors[off..off + SECTOR_LEN])
    }

    pub fn write_sector(&mut self, index: u32, data: &[u8]) -> Result<(), NandError> {
        if index >= self.sector_count() {
            return Err(NandError::SectorOutOfRange(index));
        }
        if data.len() != SECTOR_LEN {
            return Err(NandError::BadSectorLength(data.len()));
        }
        let off = index as usize * SECTOR_LEN;
        self.sectors[off..off + SECTOR_LEN].copy_from_slice(data);
        Ok(())
    }

    pub fn keysector(&self) -> Keysector {
        Keysector::from_sector(self.read_sector(KEYSECTOR_INDEX).expect("keysector is mapped"))
    }

    pub fn set_keysector(&mut self, ks: &Keysector) {
        self.write_sector(KEYSECTOR_INDEX, &ks.to_bytes())
            .expect("keysector is mapped");
    }

    fn check_key_number(key_number: usize) -> Result<usize, NandError> {
        if (1..=KEYSECTOR_BLOCKS).contains(&key_number) {
            Ok(key_number - 1)
        } else {
            Err(NandError::KeyIndexOutOfRange(key_number))
        }
    }

    /// Ciphertext block of keysector Key #`key_number` (1-based).
    pub fn keysector_block(&self, key_number: usize) -> Result<Block, NandError> {
        let i = Self::check_key_number(key_number)?;
        Ok(self.keysector().0[i])
    }

    pub fn set_keysector_block(&mut self, key_number: usize, block: &Block) -> Result<(), NandError> {
        let i = Self::check_key_number(key_number)?;
        let mut ks = self.keysector();
        ks.0[i] = *block;
        self.set_keysector(&ks);
        Ok(())
    }

    /// The whole partition span, including any zero padding.
    pub fn read_partition(&self, slot: FirmSlot) -> &[u8] {
        let span = self.partition(slot);
        &self.sectors[span.byte_offset()..span.byte_offset() + span.byte_len()]
    }

    /// Replaces the partition contents; bytes past `data` become zero.
    pub fn write_partition(&mut self, slot: FirmSlot, data: &[u8]) -> Result<(), NandError> {
        let span = self.partition(slot);
        if data.len() > span.byte_len() {
            return Err(NandError::PartitionOverflow {
                slot,
                len: data.len(),
                capacity: span.byte_len(),
            });
        }
        let region = &mut self.sectors[span.byte_offset()..span.byte_offset() + span.byte_len()];
        region[..data.len()].copy_from_slice(data);
        region[data.len()..].fill(0);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.sectors.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.write_u32::<LittleEndian>(self.sector_count()).unwrap();
        for p in &self.partitions {
            out.write_u32::<LittleEndian>(p.start).unwrap();
            out.write_u32::<LittleEndian>(p.count).unwrap();
        }
        out.extend_from_slice(&self.sectors);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NandError> {
        let corrupt = |m: &str| NandError::CorruptImage(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..16] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if bytes[16] != FORMAT_VERSION {
            return Err(NandError::CorruptImage(format!(
                "unsupported version {}",
                bytes[16]
            )));
        }
        let mut cur = Cursor::new(&bytes[17..HEADER_LEN]);
        let count = cur.read_u32::<LittleEndian>()?;
        let mut partitions = [PartitionSpan { start: 0, count: 0 }; 2];
        for p in partitions.iter_mut() {
            p.start = cur.read_u32::<LittleEndian>()?;
            p.count = cur.read_u32::<LittleEndian>()?;
        }
        let expected = (count as usize)
            .checked_mul(SECTOR_LEN)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| corrupt("sector count overflows"))?;
        if bytes.len() != expected {
            return Err(NandError::CorruptImage(format!(
                "expected {expected:#x} bytes, found {:#x}",
                bytes.len()
            )));
        }
        validate_geometry(count, &partitions)?;
        let mut sectors = Vec::new();
        Cursor::new(&bytes[HEADER_LEN..]).read_to_end(&mut sectors)?;
        Ok(Self {
            sectors,
            partitions,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NandError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NandError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn validate_geometry(sector_count: u32, parts: &[PartitionSpan; 2]) -> Result<(), NandError> {
    let bad = |m: String| Err(NandError::CorruptImage(m));
    if sector_count <= KEYSECTOR_INDEX {
        return bad(format!("{sector_count:#x} sectors cannot hold the keysector"));
    }
    for p in parts {
        if p.count == 0 || p.start.checked_add(p.count).is_none_or(|e| e > sector_count) {
            return bad(format!("partition {p:?} exceeds the image"));
        }
        if p.contains_sector(KEYSECTOR_INDEX) {
            return bad(format!("partition {p:?} overlaps the keysector"));
        }
    }
    if parts[0].overlaps(&parts[1]) {
        return bad("FIRM partitions overlap".into());
    }
    Ok(())
}
