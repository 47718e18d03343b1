//! Known-answer vectors. Argon2id values were computed with an independent
//! implementation (argon2-cffi); the AES-CTR vector is the NIST SP 800-38A
//! F.5.5 example, extended to a full block and hashed with Python's
//! `cryptography` package.

use sflc_core::crypto::{decrypt_block, encrypt_block, kdf_derive, Iv128, KdfCost, Key256};
use sha2::{Digest, Sha256};

fn salt() -> [u8; 32] {
    std::array::from_fn(|i| i as u8)
}

fn hex32(s: &str) -> [u8; 32] {
    hex::decode(s).unwrap().try_into().unwrap()
}

#[test]
fn argon2id_fast_cost() {
    let k = kdf_derive(b"password", &salt(), KdfCost::FAST).unwrap();
    assert_eq!(k.as_bytes(), &hex32("d47d24b4a189088b2297eee7045b5f164db197763355f81ae3cdf63686b494f6"));
    let k = kdf_derive(b"correct horse battery staple", &salt(), KdfCost::FAST).unwrap();
    assert_eq!(k.as_bytes(), &hex32("157a40c29d7451c0d75e4a0efca5f06cb3b98b35d9b738556ae42d0790950198"));
}

#[test]
fn argon2id_standard_cost() {
    let k = kdf_derive(b"password", &salt(), KdfCost::STANDARD).unwrap();
    assert_eq!(k.as_bytes(), &hex32("8af46d62904bdbb312b5afff66d4262db02e8a9863c34b940c8b0ad9b0031198"));
    let k = kdf_derive(b"correct horse battery staple", &salt(), KdfCost::STANDARD).unwrap();
    assert_eq!(k.as_bytes(), &hex32("6ed12d7d594a6ae56c7ad1725982ae0d41317bd2b239dd1e0916d913d4da0757"));
}

const NIST_KEY: &str = "603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4";
const NIST_IV: &str = "f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff";
const NIST_PT: &str = "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51\
30c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710";
const NIST_CT: &str = "601ec313775789a5b7a7f504bbf3d228f443e3ca4d62b59aca84e990cacaf5c5\
2b0930daa23de94ce87017ba2d84988ddfc9c58db67aada613c2dd08457941a6";

#[test]
fn aes256_ctr_block() {
    let key = Key256::from_bytes(hex32(NIST_KEY));
    let iv = Iv128(hex::decode(NIST_IV).unwrap().try_into().unwrap());
    let mut pt = [0u8; 4096];
    pt[..64].copy_from_slice(&hex::decode(NIST_PT).unwrap());
    for (i, b) in pt[64..].iter_mut().enumerate() {
        *b = ((i * 7 + 3) & 0xff) as u8;
    }
    let ct = encrypt_block(&key, &iv, &pt);
    assert_eq!(hex::encode(&ct[..64]), NIST_CT);
    assert_eq!(
        hex::encode(Sha256::digest(ct)),
        "1753c357cb2c4299276e093da13611e4542b9697c8e0eca3301516c639c70bbb"
    );
    assert_eq!(
        hex::encode(&ct[4064..]),
        "565e1abd3b06c32635875768d9dfd5c598667779504eeec72c522186e624c19e"
    );
    assert_eq!(decrypt_block(&key, &iv, &ct), pt);
}
