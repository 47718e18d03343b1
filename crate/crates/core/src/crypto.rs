//! Key derivation, key wrapping and block encryption.
//!
//! - Argon2id turns a password and the device salt into a key-encryption key.
//! - AES-256-GCM wraps 32-byte keys into 64-byte DMB cells.
//! - AES-256-CTR with an explicit random 128-bit IV encrypts blocks.

use aes::cipher::{BlockEncrypt, KeyInit, StreamCipher};
use aes::Aes256;
use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use argon2::{Algorithm, Argon2, Params, Version};
use ctr::cipher::InnerIvInit;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::error::{Error, Result};
use crate::layout::{Block, IV_LEN, KEY_LEN, SALT_LEN, TAG_LEN};

type Aes256Ctr = ctr::Ctr128BE<Aes256>;
type Aes256CtrCore = ctr::CtrCore<Aes256, ctr::flavors::Ctr128BE>;

/// A 256-bit secret. Wiped on drop.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct Key256([u8; KEY_LEN]);

impl Key256 {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Key256(bytes)
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self> {
        let mut k = [0u8; KEY_LEN];
        fill_random(rng, &mut k)?;
        Ok(Key256(k))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for Key256 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Key256(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Iv128(pub [u8; IV_LEN]);

impl Iv128 {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self> {
        let mut iv = [0u8; IV_LEN];
        fill_random(rng, &mut iv)?;
        Ok(Iv128(iv))
    }
}

/// Argon2id cost parameters. Not stored on disk: opening an image needs the
/// same cost it was formatted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfCost {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl KdfCost {
    pub const STANDARD: KdfCost = KdfCost { memory_kib: 65536, iterations: 3, parallelism: 1 };
    /// For tests and CI only.
    pub const FAST: KdfCost = KdfCost { memory_kib: 8, iterations: 1, parallelism: 1 };
}

impl Default for KdfCost {
    fn default() -> Self {
        KdfCost::STANDARD
    }
}

pub fn kdf_derive(password: &[u8], salt: &[u8; SALT_LEN], cost: KdfCost) -> Result<Key256> {
    if password.is_empty() {
        return Err(Error::EmptyPassword);
    }
    let params = Params::new(cost.memory_kib, cost.iterations, cost.parallelism, Some(KEY_LEN))
        .map_err(|e| Error::Kdf(e.to_string()))?;
    let argon = Argon2::new(Algorithm::Argon2id, Version::V0x13, params);
    let mut out = [0u8; KEY_LEN];
    argon
        .hash_password_into(password, salt, &mut out)
        .map_err(|e| Error::Kdf(e.to_string()))?;
    let key = Key256(out);
    out.zeroize();
    Ok(key)
}

/// An AEAD-wrapped key as stored in a DMB cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WrappedKey {
    /// The GCM nonce is the first 12 bytes; the last 4 are random padding.
    pub iv: Iv128,
    pub ciphertext: [u8; KEY_LEN],
    pub tag: [u8; TAG_LEN],
}

pub fn wrap_key<R: RngCore + CryptoRng>(kek: &Key256, payload: &Key256, rng: &mut R) -> Result<WrappedKey> {
    let iv = Iv128::random(rng)?;
    let aead = Aes256Gcm::new(kek.0.as_ref().into());
    let mut ciphertext = payload.0;
    let tag = aead
        .encrypt_in_place_detached(Nonce::from_slice(&iv.0[..12]), &[], &mut ciphertext)
        .map_err(|_| Error::AuthFailure)?;
    Ok(WrappedKey { iv, ciphertext, tag: tag.into() })
}

/// Fails with [`Error::AuthFailure`] when `kek` did not wrap this cell, which
/// is the normal outcome of probing a cell with someone else's password.
pub fn unwrap_key(kek: &Key256, wrapped: &WrappedKey) -> Result<Key256> {
    let aead = Aes256Gcm::new(kek.0.as_ref().into());
    let mut buf = wrapped.ciphertext;
    aead.decrypt_in_place_detached(
        Nonce::from_slice(&wrapped.iv.0[..12]),
        &[],
        &mut buf,
        Tag::from_slice(&wrapped.tag),
    )
    .map_err(|_| Error::AuthFailure)?;
    let key = Key256(buf);
    buf.zeroize();
    Ok(key)
}

/// AES-256-CTR with the key schedule expanded once.
#[derive(Clone)]
pub struct CtrCipher {
    aes: Aes256,
}

impl CtrCipher {
    pub fn new(key: &Key256) -> Self {
        CtrCipher { aes: Aes256::new(key.0.as_ref().into()) }
    }

    /// XORs the keystream for `iv` into `buf`. Encryption and decryption are
    /// the same operation.
    pub fn apply(&self, iv: &Iv128, buf: &mut [u8]) {
        let mut ctr = Aes256Ctr::from_core(Aes256CtrCore::inner_iv_init(self.aes.clone(), (&iv.0).into()));
        ctr.apply_keystream(buf);
    }

    /// Single-block AES encryption, used for deterministic per-block values.
    pub(crate) fn encrypt_one(&self, mut block: [u8; 16]) -> [u8; 16] {
        self.aes.encrypt_block((&mut block).into());
        block
    }
}

pub fn encrypt_block(key: &Key256, iv: &Iv128, plaintext: &Block) -> Block {
    let mut out = *plaintext;
    CtrCipher::new(key).apply(iv, &mut out);
    out
}

pub fn decrypt_block(key: &Key256, iv: &Iv128, ciphertext: &Block) -> Block {
    let mut out = *ciphertext;
    CtrCipher::new(key).apply(iv, &mut out);
    out
}

pub fn fill_random<R: RngCore + CryptoRng>(rng: &mut R, buf: &mut [u8]) -> Result<()> {
    rng.try_fill_bytes(buf).map_err(|e| Error::Rng(e.to_string()))
}

pub fn random_fill<R: RngCore + CryptoRng>(rng: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; len];
    fill_random(rng, &mut out)?;
    Ok(out)
}

/// Derives a subkey bound to `label`, so one master key never keys two
/// different constructions.
pub(crate) fn derive_subkey(key: &Key256, label: &[u8]) -> Key256 {
    let mut h = Sha256::new();
    h.update(label);
    h.update([0u8]);
    h.update(key.0);
    let mut out: [u8; KEY_LEN] = h.finalize().into();
    let k = Key256(out);
    out.zeroize();
    k
}
