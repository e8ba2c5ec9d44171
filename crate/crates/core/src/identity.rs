//! Certificate authority, signatures and pseudonymous identities.
//!
//! Signatures are Ed25519. A participant is known on the ledger only by its
//! [`Pseudonym`], the SHA-256 digest of its public key.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::ledger::Hash;

/// Simulation timestamp in milliseconds.
pub type Millis = u64;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "serde_bytes")] pub Vec<u8>);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..self.0.len().min(6)]))
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "serde_bytes")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..self.0.len().min(6)]))
    }
}

/// Identity derived solely from a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pseudonym(pub Hash);

impl Pseudonym {
    pub fn of(key: &PublicKey) -> Self {
        Pseudonym(Hash::digest(&key.0))
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({})", &self.0.to_hex()[..12])
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct KeyPair {
    pub public_key: PublicKey,
    #[serde(with = "serde_bytes")]
    pub secret_key: Vec<u8>,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public_key", &self.public_key).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        KeyPair { public_key: PublicKey(signing.verifying_key().to_bytes().to_vec()), secret_key: seed.to_vec() }
    }

    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn pseudonym(&self) -> Pseudonym {
        Pseudonym::of(&self.public_key)
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.secret_key, message)
    }
}

/// Signs with a 32-byte Ed25519 secret seed.
///
/// Panics if the secret key is not 32 bytes; keys only come from
/// [`KeyPair`] constructors.
pub fn sign(secret_key: &[u8], message: &[u8]) -> Signature {
    let seed: [u8; 32] = secret_key.try_into().expect("secret key must be 32 bytes");
    let signing = SigningKey::from_bytes(&seed);
    Signature(signing.sign(message).to_bytes().to_vec())
}

/// Total verification: malformed keys or signatures yield `false`.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key_bytes) = <[u8; 32]>::try_from(public_key.0.as_slice()) else {
        return false;
    };
    let Ok(key) = VerifyingKey::from_bytes(&key_bytes) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(&signature.0) else {
        return false;
    };
    key.verify(message, &sig).is_ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Vehicle,
    Peer,
    Orderer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: Pseudonym,
    pub subject_public_key: PublicKey,
    pub role: Role,
    pub issuer: Pseudonym,
    pub valid_from: Millis,
    pub valid_to: Millis,
    pub issuer_signature: Signature,
}

#[derive(Serialize)]
struct CertificateBody<'a> {
    subject: &'a Pseudonym,
    subject_public_key: &'a PublicKey,
    role: Role,
    issuer: &'a Pseudonym,
    valid_from: Millis,
    valid_to: Millis,
}

impl Certificate {
    fn signed_bytes(&self) -> Vec<u8> {
        codec::encode(&CertificateBody {
            subject: &self.subject,
            subject_public_key: &self.subject_public_key,
            role: self.role,
            issuer: &self.issuer,
            valid_from: self.valid_from,
            valid_to: self.valid_to,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("validity window is empty: valid_to {valid_to} < valid_from {valid_from}")]
    InvalidWindow { valid_from: Millis, valid_to: Millis },
}

/// The single system certificate authority.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    keys: KeyPair,
}

impl CertificateAuthority {
    pub fn new(keys: KeyPair) -> Self {
        CertificateAuthority { keys }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public_key
    }

    pub fn issue(
        &self,
        subject_public_key: &PublicKey,
        role: Role,
        valid_from: Millis,
        valid_to: Millis,
    ) -> Result<Certificate, IdentityError> {
        ca_issue(&self.keys, subject_public_key, role, valid_from, valid_to)
    }
}

pub fn ca_issue(
    ca: &KeyPair,
    subject_public_key: &PublicKey,
    role: Role,
    valid_from: Millis,
    valid_to: Millis,
) -> Result<Certificate, IdentityError> {
    if valid_to < valid_from {
        return Err(IdentityError::InvalidWindow { valid_from, valid_to });
    }
    let mut cert = Certificate {
        subject: Pseudonym::of(subject_public_key),
        subject_public_key: subject_public_key.clone(),
        role,
        issuer: ca.pseudonym(),
        valid_from,
        valid_to,
        issuer_signature: Signature(Vec::new()),
    };
    cert.issuer_signature = ca.sign(&cert.signed_bytes());
    Ok(cert)
}

pub fn verify_certificate(cert: &Certificate, ca_public_key: &PublicKey, now: Millis) -> bool {
    cert.subject == Pseudonym::of(&cert.subject_public_key)
        && cert.issuer == Pseudonym::of(ca_public_key)
        && (cert.valid_from..=cert.valid_to).contains(&now)
        && verify(ca_public_key, &cert.signed_bytes(), &cert.issuer_signature)
}

/// Key pair plus the certificate that binds it to a role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identity {
    pub keys: KeyPair,
    pub certificate: Certificate,
}

impl Identity {
    pub fn pseudonym(&self) -> Pseudonym {
        self.certificate.subject
    }
}

/// Pre-generated identities for a whole deployment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityBundle {
    pub ca: KeyPair,
    pub vehicles: Vec<Identity>,
    pub peers: Vec<Identity>,
    pub orderers: Vec<Identity>,
}

/// Validity used for deployment certificates: effectively unbounded.
pub const DEFAULT_VALIDITY: (Millis, Millis) = (0, u64::MAX / 2);

impl IdentityBundle {
    pub fn generate(rng: &mut impl RngCore, vehicles: usize, peers: usize, orderers: usize) -> Self {
        let ca_keys = KeyPair::generate(rng);
        let ca = CertificateAuthority::new(ca_keys.clone());
        let mut make = |role: Role, n: usize| -> Vec<Identity> {
            (0..n)
                .map(|_| {
                    let keys = KeyPair::generate(rng);
                    let certificate = ca
                        .issue(&keys.public_key, role, DEFAULT_VALIDITY.0, DEFAULT_VALIDITY.1)
                        .expect("default validity window is non-empty");
                    Identity { keys, certificate }
                })
                .collect()
        };
        let orderers = make(Role::Orderer, orderers);
        let peers = make(Role::Peer, peers);
        let vehicles = make(Role::Vehicle, vehicles);
        IdentityBundle { ca: ca_keys, vehicles, peers, orderers }
    }

    pub fn authority(&self) -> CertificateAuthority {
        CertificateAuthority::new(self.ca.clone())
    }
}
