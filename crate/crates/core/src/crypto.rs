//! Raw AES-128 block primitives shared by the keyslot engine and by offline
//! tooling (firmware builders, attack search loops) that hold explicit keys.
//!
//! CTR mode here treats the 16-byte nonce as a 128-bit big-endian counter
//! and increments it once per block.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use sha2::{Digest, Sha256};

pub const BLOCK_LEN: usize = 16;

pub type Block = [u8; BLOCK_LEN];
pub type Key = [u8; BLOCK_LEN];

/// Blocks handed to the cipher per batch; lets the backend pipeline AES-NI.
const BATCH: usize = 64;

pub fn cipher(key: &Key) -> Aes128 {
    Aes128::new(GenericArray::from_slice(key))
}

pub fn encrypt_block(cipher: &Aes128, block: &Block) -> Block {
    let mut b = GenericArray::clone_from_slice(block);
    cipher.encrypt_block(&mut b);
    b.into()
}

pub fn decrypt_block(cipher: &Aes128, block: &Block) -> Block {
    let mut b = GenericArray::clone_from_slice(block);
    cipher.decrypt_block(&mut b);
    b.into()
}

/// In-place ECB over `data`; length must already be a multiple of 16.
pub(crate) fn ecb_in_place(cipher: &Aes128, encrypt: bool, data: &mut [u8]) {
    debug_assert_eq!(data.len() % BLOCK_LEN, 0);
    for chunk in data.chunks_exact_mut(BLOCK_LEN) {
        let b = GenericArray::from_mut_slice(chunk);
        if encrypt {
            cipher.encrypt_block(b);
        } else {
            cipher.decrypt_block(b);
        }
    }
}

/// Counter block for the `index`-th 16-byte block of a CTR stream.
pub fn counter_block(nonce: &Block, index: u64) -> Block {
    u128::from_be_bytes(*nonce)
        .wrapping_add(index as u128)
        .to_be_bytes()
}

/// Keystream block `index` of the CTR stream for (`cipher`, `nonce`).
pub fn keystream_block(cipher: &Aes128, nonce: &Block, index: u64) -> Block {
    encrypt_block(cipher, &counter_block(nonce, index))
}

/// XOR `data` with the CTR keystream starting at block 0. Involutive.
pub fn ctr_apply(cipher: &Aes128, nonce: &Block, data: &mut [u8]) {
    let mut counter = u128::from_be_bytes(*nonce);
    let mut ks = [GenericArray::<u8, aes::cipher::consts::U16>::default(); BATCH];
    for batch in data.chunks_mut(BLOCK_LEN * BATCH) {
        let blocks = batch.len().div_ceil(BLOCK_LEN);
        for slot in ks.iter_mut().take(blocks) {
            *slot = GenericArray::from(counter.to_be_bytes());
            counter = counter.wrapping_add(1);
        }
        cipher.encrypt_blocks(&mut ks[..blocks]);
        for (chunk, stream) in batch.chunks_mut(BLOCK_LEN).zip(ks.iter()) {
            for (d, k) in chunk.iter_mut().zip(stream.iter()) {
                *d ^= k;
            }
        }
    }
}

/// CTR with an explicit key, for tooling that runs outside a console.
pub fn ctr_with_key(key: &Key, nonce: &Block, data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    ctr_apply(&cipher(key), nonce, &mut out);
    out
}

pub fn ecb_with_key(key: &Key, encrypt: bool, data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    ecb_in_place(&cipher(key), encrypt, &mut out);
    out
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// First 16 bytes of a digest, the simulator's generic digest-to-key map.
pub fn key_from_digest(digest: &[u8; 32]) -> Key {
    let mut k = [0u8; 16];
    k.copy_from_slice(&digest[..16]);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    // FIPS-197 appendix C.1
    const FIPS_KEY: Key = [
        0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e,
        0x0f,
    ];
    const FIPS_PT: Block = [
        0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0xcc, 0xdd, 0xee,
        0xff,
    ];
    const FIPS_CT: Block = [
        0x69, 0xc4, 0xe0, 0xd8, 0x6a, 0x7b, 0x04, 0x30, 0xd8, 0xcd, 0xb7, 0x80, 0x70, 0xb4, 0xc5,
        0x5a,
    ];

    #[test]
    fn fips197_vector() {
        let c = cipher(&FIPS_KEY);
        assert_eq!(encrypt_block(&c, &FIPS_PT), FIPS_CT);
        assert_eq!(decrypt_block(&c, &FIPS_CT), FIPS_PT);
    }

    #[test]
    fn ctr_matches_per_block_keystream() {
        let key = [7u8; 16];
        let nonce = [0xffu8; 16]; // exercises the 128-bit wraparound
        let data: Vec<u8> = (0..(BLOCK_LEN * BATCH * 2 + 5) as u32).map(|i| i as u8).collect();
        let out = ctr_with_key(&key, &nonce, &data);
        let c = cipher(&key);
        for (i, (o, d)) in out.chunks(16).zip(data.chunks(16)).enumerate() {
            let ks = keystream_block(&c, &nonce, i as u64);
            for j in 0..o.len() {
                assert_eq!(o[j], d[j] ^ ks[j]);
            }
        }
    }

    #[test]
    fn counter_is_big_endian() {
        let mut nonce = [0u8; 16];
        nonce[15] = 0xff;
        let next = counter_block(&nonce, 1);
        assert_eq!(next[14], 1);
        assert_eq!(next[15], 0);
    }
}
