//! Primitive building blocks shared by the packet format and the end-to-end
//! payload layer. Everything here is keyed off Ristretto255 shared secrets.

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use chacha20poly1305::aead::AeadInPlace;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit, Tag};
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use hmac::{Hmac, Mac};
use rand::Rng;
use sha2::{Digest, Sha256, Sha512};
use subtle::ConstantTimeEq;

pub(crate) const KEY_LEN: usize = 32;
pub(crate) const AEAD_TAG_LEN: usize = 16;

type HmacSha256 = Hmac<Sha256>;

/// Domain-separated key derivation: `SHA-256("loopmix/" || label || input)`.
pub(crate) fn derive_key(label: &[u8], input: &[u8]) -> [u8; KEY_LEN] {
    let mut h = Sha256::new();
    h.update(b"loopmix/");
    h.update(label);
    h.update(input);
    h.finalize().into()
}

/// Uniform scalar from 64 random bytes.
pub(crate) fn random_scalar<R: Rng + ?Sized>(rng: &mut R) -> Scalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    Scalar::from_bytes_mod_order_wide(&wide)
}

pub(crate) fn hash_to_scalar(label: &[u8], parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    h.update(b"loopmix/");
    h.update(label);
    for p in parts {
        h.update(p);
    }
    let wide: [u8; 64] = h.finalize().into();
    Scalar::from_bytes_mod_order_wide(&wide)
}

pub(crate) fn decode_point(bytes: &[u8; 32]) -> Option<RistrettoPoint> {
    CompressedRistretto(*bytes).decompress()
}

/// XOR `buf` with the ChaCha20 keystream for `key` (zero nonce, keys are single use).
pub(crate) fn xor_keystream(key: &[u8; KEY_LEN], buf: &mut [u8]) {
    let mut cipher = ChaCha20::new(key.into(), &[0u8; 12].into());
    cipher.apply_keystream(buf);
}

pub(crate) fn keystream(key: &[u8; KEY_LEN], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    xor_keystream(key, &mut out);
    out
}

/// HMAC-SHA256 truncated to `N` bytes.
pub(crate) fn mac<const N: usize>(key: &[u8; KEY_LEN], data: &[&[u8]]) -> [u8; N] {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    for d in data {
        m.update(d);
    }
    let full = m.finalize().into_bytes();
    let mut out = [0u8; N];
    out.copy_from_slice(&full[..N]);
    out
}

pub(crate) fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && bool::from(a.ct_eq(b))
}

/// Seals `buf[..len - 16]` in place and writes the tag into the last 16 bytes.
pub(crate) fn aead_seal(key: &[u8; KEY_LEN], buf: &mut [u8]) {
    let split = buf.len() - AEAD_TAG_LEN;
    let (body, tag_out) = buf.split_at_mut(split);
    let cipher = ChaCha20Poly1305::new(key.into());
    let tag = cipher
        .encrypt_in_place_detached(&[0u8; 12].into(), b"", body)
        .expect("payload within chacha20poly1305 limits");
    tag_out.copy_from_slice(&tag);
}

/// Inverse of [`aead_seal`]; on success `buf[..len - 16]` holds the plaintext.
pub(crate) fn aead_open(key: &[u8; KEY_LEN], buf: &mut [u8]) -> bool {
    if buf.len() < AEAD_TAG_LEN {
        return false;
    }
    let split = buf.len() - AEAD_TAG_LEN;
    let (body, tag) = buf.split_at_mut(split);
    let tag = Tag::clone_from_slice(tag);
    let cipher = ChaCha20Poly1305::new(key.into());
    cipher
        .decrypt_in_place_detached(&[0u8; 12].into(), b"", body, &tag)
        .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aead_round_trip_and_tamper() {
        let key = derive_key(b"test", b"k");
        let mut buf = vec![7u8; 64];
        aead_seal(&key, &mut buf);
        let mut tampered = buf.clone();
        assert!(aead_open(&key, &mut buf));
        assert!(buf[..48].iter().all(|&b| b == 7));
        tampered[3] ^= 1;
        assert!(!aead_open(&key, &mut tampered));
    }

    #[test]
    fn keystream_is_an_involution() {
        let key = derive_key(b"x", b"y");
        let mut buf = b"some plaintext".to_vec();
        xor_keystream(&key, &mut buf);
        assert_ne!(&buf[..], b"some plaintext");
        xor_keystream(&key, &mut buf);
        assert_eq!(&buf[..], b"some plaintext");
    }
}
