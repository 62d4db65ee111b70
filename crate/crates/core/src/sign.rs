//! Origin signatures over cache updates (RSA PKCS#1 v1.5 with SHA-256).

use rsa::pkcs1v15::Pkcs1v15Sign;
use sha2::{Digest, Sha256};

use crate::envelope::ContentEnvelope;
use crate::error::CryptoError;
use crate::keys::{KeyPair, PublicKey};
use crate::obfuscate::ObfuscatedId;

const UPDATE_LABEL: &[u8] = b"ocdn-update-v1";

/// Signs an arbitrary message; the primitive behind updates and rosters.
pub fn sign_bytes(signer: &KeyPair, message: &[u8]) -> Vec<u8> {
    let digest = Sha256::digest(message);
    signer.rsa().sign(Pkcs1v15Sign::new::<Sha256>(), &digest).expect("signing with a valid 2048-bit key cannot fail")
}

pub fn verify_bytes(public: &PublicKey, message: &[u8], signature: &[u8]) -> Result<(), CryptoError> {
    let digest = Sha256::digest(message);
    public.rsa().verify(Pkcs1v15Sign::new::<Sha256>(), &digest, signature).map_err(|_| CryptoError::BadSignature)
}

fn update_message(id: &ObfuscatedId, envelope_bytes: &[u8]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(UPDATE_LABEL.len() + 32 + envelope_bytes.len());
    msg.extend_from_slice(UPDATE_LABEL);
    msg.extend_from_slice(id.as_bytes());
    msg.extend_from_slice(envelope_bytes);
    msg
}

/// Signature over `(id, serialized envelope)` proving which origin pushed it.
pub fn sign_update(origin: &KeyPair, id: &ObfuscatedId, env: &ContentEnvelope) -> Vec<u8> {
    sign_update_bytes(origin, id, &env.to_bytes())
}

/// [`sign_update`] over an already-serialized envelope.
pub fn sign_update_bytes(origin: &KeyPair, id: &ObfuscatedId, envelope_bytes: &[u8]) -> Vec<u8> {
    sign_bytes(origin, &update_message(id, envelope_bytes))
}

pub fn verify_update(
    origin_pub: &PublicKey,
    id: &ObfuscatedId,
    env: &ContentEnvelope,
    signature: &[u8],
) -> Result<(), CryptoError> {
    verify_update_bytes(origin_pub, id, &env.to_bytes(), signature)
}

/// [`verify_update`] over an already-serialized envelope.
pub fn verify_update_bytes(
    origin_pub: &PublicKey,
    id: &ObfuscatedId,
    envelope_bytes: &[u8],
    signature: &[u8],
) -> Result<(), CryptoError> {
    verify_bytes(origin_pub, &update_message(id, envelope_bytes), signature)
}
