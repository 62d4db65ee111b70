//! Shared primitives for an oblivious content delivery network.
//!
//! Origins publish content under identifiers derived with a key that the
//! CDN never sees: [`derive_obfuscated_id`] maps a [`CanonicalUrl`] to an
//! HMAC-SHA-256 tag and [`seal_content`] pads, splits and encrypts the object
//! into a [`ContentEnvelope`]. Clients talk to the key-holding exit proxy with
//! a per-request [`SessionKey`] sealed under the exit's RSA-2048 key.
//!
//! The [`ring`] module assigns URLs to exit proxies with consistent hashing
//! over self-certifying identifiers, and [`roster`] carries the signed ring
//! membership document.

pub mod envelope;
pub mod error;
pub mod keys;
pub mod obfuscate;
pub mod ring;
pub mod roster;
pub mod session;
pub mod sign;
pub mod url;

pub use envelope::{open_content, pad_length, seal_content, ContentEnvelope, BLOCK_SIZE, MAX_OBJECT_SIZE};
pub use error::CryptoError;
pub use keys::{KeyId, KeyPair, PublicKey, SessionKey, SharedKey};
pub use obfuscate::{derive_obfuscated_id, ObfuscatedId, MAX_ENCODINGS};
pub use ring::{diff_on_change, position_of_url, verify_member, Ring, RingError, RingPosition, SelfCertifyingId};
pub use roster::{Roster, RosterError, RosterMember};
pub use session::{decrypt_url, encrypt_url, open_response, open_session_key, seal_response, seal_session_key};
pub use sign::{sign_update, verify_update};
pub use url::{CanonicalUrl, UrlError};

/// Random number generators accepted by every operation that needs fresh randomness.
pub use rand::{CryptoRng, RngCore};
