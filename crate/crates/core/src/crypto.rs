//! Cryptographic substrate: a keyed PRF, truncated MACs, a length-preserving
//! stream cipher and one-way key chains.
//!
//! Everything is built on HMAC-SHA256. Each use of the PRF is tagged with a
//! one-octet domain prefix so that derivation trees for different key types
//! can never produce the same input.

use std::fmt;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::NodeId;

type HmacSha256 = Hmac<Sha256>;

/// Length in octets of every symmetric key.
pub const KEY_SIZE: usize = 16;
/// Length in octets of every MAC tag.
pub const MAC_SIZE: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key chain length must be at least 1")]
    EmptyChain,
    #[error("expected {expected} octets, got {got}")]
    BadLength { expected: usize, got: usize },
}

/// Domain-separation prefixes for PRF inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Individual = 0x01,
    Master = 0x02,
    Pairwise = 0x03,
    ClusterWrap = 0x04,
}

const MAC_PREFIX: u8 = 0x10;
const KEYSTREAM_PREFIX: u8 = 0x20;
const CHAIN_PREFIX: u8 = 0x30;

/// Fixed-width symmetric key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyMaterial([u8; KEY_SIZE]);

impl KeyMaterial {
    /// All-zero sentinel used for absent keys in dumps. Never produced by derivation.
    pub const ABSENT: KeyMaterial = KeyMaterial([0; KEY_SIZE]);

    pub fn from_bytes(bytes: [u8; KEY_SIZE]) -> Self {
        KeyMaterial(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_SIZE] = bytes.try_into().map_err(|_| CryptoError::BadLength {
            expected: KEY_SIZE,
            got: bytes.len(),
        })?;
        Ok(KeyMaterial(arr))
    }

    /// Fresh random key; redraws on the (astronomically unlikely) all-zero value.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut bytes = [0u8; KEY_SIZE];
            rng.fill_bytes(&mut bytes);
            if bytes != [0; KEY_SIZE] {
                return KeyMaterial(bytes);
            }
        }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_SIZE] {
        &self.0
    }

    pub fn is_absent(&self) -> bool {
        self.0 == [0; KEY_SIZE]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({})", self.to_hex())
    }
}

/// Truncated HMAC tag.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacTag([u8; MAC_SIZE]);

impl MacTag {
    pub const ZERO: MacTag = MacTag([0; MAC_SIZE]);

    pub fn from_bytes(bytes: [u8; MAC_SIZE]) -> Self {
        MacTag(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; MAC_SIZE] {
        &self.0
    }
}

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({})", hex::encode(self.0))
    }
}

fn hmac_with(key: &KeyMaterial) -> HmacSha256 {
    <HmacSha256 as Mac>::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length")
}

/// Keyed pseudo-random function: HMAC-SHA256 truncated to [`KEY_SIZE`].
pub fn prf(key: &KeyMaterial, input: &[u8]) -> KeyMaterial {
    debug_assert!(!input.is_empty(), "prf input must be non-empty");
    let mut h = hmac_with(key);
    h.update(input);
    let out = h.finalize().into_bytes();
    let mut bytes = [0u8; KEY_SIZE];
    bytes.copy_from_slice(&out[..KEY_SIZE]);
    KeyMaterial(bytes)
}

/// Two-octet big-endian node id encoding used in every PRF input.
pub fn encode_id(id: NodeId) -> [u8; 2] {
    id.0.to_be_bytes()
}

/// `prf(key, domain || encode(id))`.
pub fn derive(key: &KeyMaterial, domain: Domain, id: NodeId) -> KeyMaterial {
    let id = encode_id(id);
    prf(key, &[domain as u8, id[0], id[1]])
}

pub fn mac(key: &KeyMaterial, message: &[u8]) -> MacTag {
    let mut h = hmac_with(key);
    h.update(&[MAC_PREFIX]);
    h.update(message);
    let out = h.finalize().into_bytes();
    let mut bytes = [0u8; MAC_SIZE];
    bytes.copy_from_slice(&out[..MAC_SIZE]);
    MacTag(bytes)
}

/// Constant-time tag check.
pub fn verify(key: &KeyMaterial, message: &[u8], tag: &MacTag) -> bool {
    let mut h = hmac_with(key);
    h.update(&[MAC_PREFIX]);
    h.update(message);
    h.verify_truncated_left(tag.as_bytes()).is_ok()
}

fn keystream_block(key: &KeyMaterial, nonce: u64, block: u64) -> KeyMaterial {
    let mut input = [0u8; 17];
    input[0] = KEYSTREAM_PREFIX;
    input[1..9].copy_from_slice(&nonce.to_be_bytes());
    input[9..].copy_from_slice(&block.to_be_bytes());
    prf(key, &input)
}

/// XOR stream cipher over `prf(key, nonce || block)` blocks. Length preserving.
pub fn encrypt(key: &KeyMaterial, plaintext: &[u8], nonce: u64) -> Vec<u8> {
    plaintext
        .chunks(KEY_SIZE)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let ks = keystream_block(key, nonce, i as u64);
            chunk
                .iter()
                .zip(ks.as_bytes().iter())
                .map(|(p, k)| p ^ k)
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn decrypt(key: &KeyMaterial, ciphertext: &[u8], nonce: u64) -> Vec<u8> {
    encrypt(key, ciphertext, nonce)
}

/// The chain's one-way step: SHA-256 of a tagged key, truncated.
pub fn one_way(key: &KeyMaterial) -> KeyMaterial {
    let mut h = Sha256::new();
    h.update([CHAIN_PREFIX]);
    h.update(key.as_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; KEY_SIZE];
    bytes.copy_from_slice(&out[..KEY_SIZE]);
    KeyMaterial(bytes)
}

/// One-way key chain. `links[0]` is the anchor and `links[i-1] == one_way(links[i])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyChain {
    links: Vec<KeyMaterial>,
}

impl KeyChain {
    pub fn links(&self) -> &[KeyMaterial] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn anchor(&self) -> &KeyMaterial {
        &self.links[0]
    }

    /// Checks every link against its successor.
    pub fn verify(&self) -> bool {
        self.links.windows(2).all(|w| one_way(&w[1]) == w[0])
    }
}

/// Builds a chain of `len` links. The last link is `one_way(seed)`; each
/// earlier link is the one-way image of the next.
pub fn generate_key_chain(seed: &KeyMaterial, len: usize) -> Result<KeyChain, CryptoError> {
    if len == 0 {
        return Err(CryptoError::EmptyChain);
    }
    let mut links = Vec::with_capacity(len);
    let mut cur = one_way(seed);
    links.push(cur);
    for _ in 1..len {
        cur = one_way(&cur);
        links.push(cur);
    }
    links.reverse();
    Ok(KeyChain { links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn prf_is_deterministic() {
        let k = KeyMaterial::random(&mut rng());
        let a = prf(&k, &encode_id(NodeId(3)));
        let b = prf(&k, &encode_id(NodeId(3)));
        assert_eq!(a, b);
    }

    #[test]
    fn prf_distinct_ids_never_collide() {
        let k = KeyMaterial::random(&mut rng());
        let outs: HashSet<_> = (0u16..=255)
            .map(|u| prf(&k, &encode_id(NodeId(u))))
            .collect();
        assert_eq!(outs.len(), 256);
    }

    #[test]
    fn prf_distinct_keys_differ() {
        let mut r = rng();
        for _ in 0..1000 {
            let k1 = KeyMaterial::random(&mut r);
            let k2 = KeyMaterial::random(&mut r);
            assert_ne!(k1, k2);
            assert_ne!(prf(&k1, b"x"), prf(&k2, b"x"));
        }
    }

    #[test]
    fn domains_separate_derivations() {
        let k = KeyMaterial::random(&mut rng());
        let id = NodeId(9);
        let all = [
            derive(&k, Domain::Individual, id),
            derive(&k, Domain::Master, id),
            derive(&k, Domain::Pairwise, id),
            derive(&k, Domain::ClusterWrap, id),
        ];
        let set: HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn mac_round_trip_and_tamper() {
        let k = KeyMaterial::random(&mut rng());
        let m = b"ack from node 2".to_vec();
        let tag = mac(&k, &m);
        assert!(verify(&k, &m, &tag));
        let mut flipped = m.clone();
        flipped[3] ^= 0x01;
        assert!(!verify(&k, &flipped, &tag));
    }

    #[test]
    fn mac_wrong_key_rejected() {
        let mut r = rng();
        let k = KeyMaterial::random(&mut r);
        let m = b"hello".to_vec();
        let tag = mac(&k, &m);
        let accepted = (0..1000)
            .filter(|_| verify(&KeyMaterial::random(&mut r), &m, &tag))
            .count();
        assert_eq!(accepted, 0);
    }

    #[test]
    fn encrypt_round_trip_and_nonce_separation() {
        let k = KeyMaterial::random(&mut rng());
        let p = b"cluster key material plus tail".to_vec();
        let c = encrypt(&k, &p, 1);
        assert_eq!(c.len(), p.len());
        assert_eq!(decrypt(&k, &c, 1), p);
        assert_ne!(encrypt(&k, &p, 2), c);
    }

    #[test]
    fn decrypt_with_wrong_key_garbles() {
        let mut r = rng();
        let k = KeyMaterial::random(&mut r);
        let p = KeyMaterial::random(&mut r);
        let c = encrypt(&k, p.as_bytes(), 5);
        for _ in 0..1000 {
            let wrong = KeyMaterial::random(&mut r);
            assert_ne!(decrypt(&wrong, &c, 5), p.as_bytes().to_vec());
        }
    }

    #[test]
    fn chain_of_one_is_seed_image() {
        let seed = KeyMaterial::random(&mut rng());
        let chain = generate_key_chain(&seed, 1).unwrap();
        assert_eq!(chain.links(), &[one_way(&seed)]);
        assert!(chain.verify());
    }

    #[test]
    fn chain_of_twenty_verifies_link_by_link() {
        let seed = KeyMaterial::random(&mut rng());
        let chain = generate_key_chain(&seed, 20).unwrap();
        assert_eq!(chain.len(), 20);
        for i in 1..20 {
            assert_eq!(one_way(&chain.links()[i]), chain.links()[i - 1]);
        }
        assert_eq!(chain, generate_key_chain(&seed, 20).unwrap());
    }

    #[test]
    fn chain_rejects_zero_length() {
        let seed = KeyMaterial::random(&mut rng());
        assert_eq!(generate_key_chain(&seed, 0), Err(CryptoError::EmptyChain));
    }

    #[test]
    fn chain_anchor_not_inverted_by_small_search() {
        // Smoke test only: 2^16 candidate preimages sharing a random prefix.
        let mut r = rng();
        let chain = generate_key_chain(&KeyMaterial::random(&mut r), 2).unwrap();
        let mut base = *KeyMaterial::random(&mut r).as_bytes();
        let hit = (0u32..1 << 16).any(|i| {
            base[14..].copy_from_slice(&(i as u16).to_be_bytes());
            one_way(&KeyMaterial(base)) == *chain.anchor()
        });
        assert!(!hit);
    }

    proptest! {
        #[test]
        fn single_bit_flip_breaks_mac(
            key in any::<[u8; KEY_SIZE]>(),
            msg in proptest::collection::vec(any::<u8>(), 1..64),
            bit in 0usize..512,
        ) {
            let k = KeyMaterial(key);
            let tag = mac(&k, &msg);
            prop_assert!(verify(&k, &msg, &tag));

            let mut m2 = msg.clone();
            let b = bit % (m2.len() * 8);
            m2[b / 8] ^= 1 << (b % 8);
            prop_assert!(!verify(&k, &m2, &tag));

            let mut t2 = *tag.as_bytes();
            t2[(bit / 8) % MAC_SIZE] ^= 1 << (bit % 8);
            prop_assert!(!verify(&k, &msg, &MacTag(t2)));
        }

        #[test]
        fn stream_cipher_round_trips(
            key in any::<[u8; KEY_SIZE]>(),
            msg in proptest::collection::vec(any::<u8>(), 0..80),
            nonce in any::<u64>(),
        ) {
            let k = KeyMaterial(key);
            let c = encrypt(&k, &msg, nonce);
            prop_assert_eq!(c.len(), msg.len());
            prop_assert_eq!(decrypt(&k, &c, nonce), msg);
        }
    }
}
