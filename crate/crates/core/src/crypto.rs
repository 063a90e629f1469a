//! Hashing, keys and signatures behind consent tags and withdrawal proofs.
//!
//! Digests are original Keccak-256 (Ethereum padding, not FIPS-202 SHA3-256).
//! Signatures are ECDSA over NIST P-384, computed on the 32 raw digest bytes
//! with RFC 6979 nonces and serialized as fixed-width `r || s`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use p384::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use p384::ecdsa::{Signature as P384Signature, SigningKey, VerifyingKey};
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRngCore, RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Keccak256};

use crate::error::CryptoError;

/// Width of a serialized signature (`r || s`, 48 bytes each).
pub const SIGNATURE_LEN: usize = 96;

/// Width of an uncompressed SEC1 public key.
pub const PUBLIC_KEY_LEN: usize = 97;

/// A 32-byte Keccak-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadDigest);
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| CryptoError::BadDigest)?;
        Ok(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Original Keccak-256 of `data`.
pub fn keccak256(data: &[u8]) -> Digest {
    let mut hasher = Keccak256::new();
    hasher.update(data);
    Digest(hasher.finalize().into())
}

/// Raw signature bytes. Usually [`SIGNATURE_LEN`] long, but anything can be
/// carried so malformed input reaches [`verify_digest`] and is rejected there.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SignatureBytes(Vec<u8>);

impl SignatureBytes {
    pub fn new(bytes: Vec<u8>) -> Self {
        SignatureBytes(bytes)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(CryptoError::BadHex);
        }
        hex::decode(s).map(SignatureBytes).map_err(|_| CryptoError::BadHex)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignatureBytes({})", self.to_hex())
    }
}

impl fmt::Display for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for SignatureBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SignatureBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SignatureBytes::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A P-384 verification key, serialized as an uncompressed SEC1 point in hex.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_encoded_point(false).as_bytes().to_vec()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        VerifyingKey::from_sec1_bytes(bytes)
            .map(PublicKey)
            .map_err(|_| CryptoError::BadPublicKey)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::BadPublicKey)?;
        if bytes.len() != PUBLIC_KEY_LEN {
            return Err(CryptoError::BadPublicKey);
        }
        PublicKey::from_bytes(&bytes)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A signing key plus its public half.
#[derive(Clone)]
pub struct KeyPair {
    secret: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    /// Generates a fresh pair from `rng`.
    pub fn generate<R: CryptoRngCore>(rng: &mut R) -> Self {
        Self::from_signing_key(SigningKey::random(rng))
    }

    /// Deterministic pair: the seed is hashed into a ChaCha20 stream that
    /// drives key generation, so equal seeds give byte-identical keys.
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(*keccak256(seed).as_bytes());
        Self::generate(&mut rng)
    }

    pub fn from_secret_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::BadSecretKey)?;
        SigningKey::from_slice(&bytes)
            .map(Self::from_signing_key)
            .map_err(|_| CryptoError::BadSecretKey)
    }

    fn from_signing_key(secret: SigningKey) -> Self {
        let public = PublicKey(*secret.verifying_key());
        KeyPair { secret, public }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.secret.to_bytes())
    }

    pub fn sign(&self, digest: &Digest) -> SignatureBytes {
        sign_digest(self, digest)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Signs the 32 raw bytes of `digest`. Deterministic for a given key and digest.
pub fn sign_digest(key: &KeyPair, digest: &Digest) -> SignatureBytes {
    let sig: P384Signature = key
        .secret
        .sign_prehash(digest.as_bytes())
        .expect("32-byte prehash is within P-384 bounds");
    SignatureBytes(sig.to_bytes().to_vec())
}

/// True iff `signature` is a valid signature of `digest` under `key`.
/// Malformed signatures are simply invalid.
pub fn verify_digest(key: &PublicKey, digest: &Digest, signature: &[u8]) -> bool {
    if signature.len() != SIGNATURE_LEN {
        return false;
    }
    let Ok(sig) = P384Signature::from_slice(signature) else {
        return false;
    };
    key.0.verify_prehash(digest.as_bytes(), &sig).is_ok()
}

/// A digest-signing scheme. P-384 is the only shipped implementation.
pub trait DigestScheme {
    type Signer;
    type Verifier;

    fn sign(signer: &Self::Signer, digest: &Digest) -> SignatureBytes;
    fn verify(verifier: &Self::Verifier, digest: &Digest, signature: &[u8]) -> bool;
}

/// ECDSA on NIST P-384.
pub struct P384;

impl DigestScheme for P384 {
    type Signer = KeyPair;
    type Verifier = PublicKey;

    fn sign(signer: &KeyPair, digest: &Digest) -> SignatureBytes {
        sign_digest(signer, digest)
    }

    fn verify(verifier: &PublicKey, digest: &Digest, signature: &[u8]) -> bool {
        verify_digest(verifier, digest, signature)
    }
}

/// Seedable source of 32-byte challenge nonces. The state is just the seed
/// and a draw counter, so it serializes and resumes exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonceSource {
    seed: u64,
    drawn: u64,
}

impl NonceSource {
    pub fn from_seed(seed: u64) -> Self {
        NonceSource { seed, drawn: 0 }
    }

    pub fn next_nonce(&mut self) -> [u8; 32] {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        // 8 words of 32 bits per nonce
        rng.set_word_pos(u128::from(self.drawn) * 8);
        let mut out = [0u8; 32];
        rng.fill_bytes(&mut out);
        self.drawn += 1;
        out
    }
}
