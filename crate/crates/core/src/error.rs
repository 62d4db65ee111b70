use thiserror::Error;

/// Failures of the cryptographic and codec primitives.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("encoding index {index} out of range (max {max})")]
    EncodingIndex { index: u8, max: u8 },
    #[error("plaintext of {len} bytes exceeds maximum object size of {max} bytes")]
    TooLarge { len: usize, max: usize },
    #[error("authentication failed")]
    Tamper,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("asymmetric decryption failed")]
    Decryption,
    #[error("invalid public key: {0}")]
    InvalidPublicKey(String),
    #[error("invalid private key: {0}")]
    InvalidPrivateKey(String),
    #[error("signature verification failed")]
    BadSignature,
    #[error("key expiry {expires_at} is not after creation time {created_at}")]
    InvalidExpiry { created_at: u64, expires_at: u64 },
    #[error("rsa operation failed: {0}")]
    Rsa(String),
}

impl From<rsa::Error> for CryptoError {
    fn from(e: rsa::Error) -> Self {
        CryptoError::Rsa(e.to_string())
    }
}
