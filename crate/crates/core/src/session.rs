//! Client/exit session crypto: the RSA-sealed session key, the encrypted
//! request URL and the re-encrypted response.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::{CryptoRng, RngCore};
use rsa::Oaep;
use sha2::Sha256;

use crate::envelope::{pad_length, MAX_OBJECT_SIZE};
use crate::error::CryptoError;
use crate::keys::{KeyPair, PublicKey, SessionKey, KEY_LEN};
use crate::url::CanonicalUrl;

/// URLs are padded to a multiple of this before encryption.
pub const URL_PAD: usize = 64;
const NONCE_LEN: usize = 12;
const URL_AAD: &[u8] = b"ocdn-url-v1";
const RESPONSE_AAD: &[u8] = b"ocdn-response-v1";

/// RSA-OAEP(SHA-256) encryption of the session key to an exit proxy; 256 bytes.
pub fn seal_session_key<R: RngCore + CryptoRng>(
    rng: &mut R,
    proxy_pub: &PublicKey,
    skey: &SessionKey,
) -> Result<Vec<u8>, CryptoError> {
    Ok(proxy_pub.rsa().encrypt(rng, Oaep::new::<Sha256>(), skey.as_bytes())?)
}

pub fn open_session_key(proxy: &KeyPair, sealed: &[u8]) -> Result<SessionKey, CryptoError> {
    let plain = proxy.rsa().decrypt(Oaep::new::<Sha256>(), sealed).map_err(|_| CryptoError::Decryption)?;
    let bytes: [u8; KEY_LEN] = plain.as_slice().try_into().map_err(|_| CryptoError::Decryption)?;
    Ok(SessionKey::from_bytes(bytes))
}

fn cipher(skey: &SessionKey) -> Aes256Gcm {
    Aes256Gcm::new_from_slice(skey.as_bytes()).expect("32-byte key")
}

fn seal_with_nonce<R: RngCore + CryptoRng>(rng: &mut R, skey: &SessionKey, aad: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = cipher(skey)
        .encrypt(Nonce::from_slice(&nonce), Payload { msg, aad })
        .expect("in-memory AES-GCM encryption cannot fail");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

fn open_with_nonce(skey: &SessionKey, aad: &[u8], bytes: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if bytes.len() < NONCE_LEN + 16 {
        return Err(CryptoError::Tamper);
    }
    let (nonce, ct) = bytes.split_at(NONCE_LEN);
    cipher(skey).decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad }).map_err(|_| CryptoError::Tamper)
}

/// Encrypts `u16 length || url || zeros` padded to a multiple of [`URL_PAD`].
pub fn encrypt_url<R: RngCore + CryptoRng>(rng: &mut R, skey: &SessionKey, url: &CanonicalUrl) -> Vec<u8> {
    let text = url.as_str().as_bytes();
    let padded = (text.len() + 2).div_ceil(URL_PAD) * URL_PAD;
    let mut plain = Vec::with_capacity(padded);
    plain.extend_from_slice(&(text.len() as u16).to_be_bytes());
    plain.extend_from_slice(text);
    plain.resize(padded, 0);
    seal_with_nonce(rng, skey, URL_AAD, &plain)
}

pub fn decrypt_url(skey: &SessionKey, ciphertext: &[u8]) -> Result<CanonicalUrl, CryptoError> {
    let plain = open_with_nonce(skey, URL_AAD, ciphertext)?;
    if plain.len() < 2 {
        return Err(CryptoError::Malformed("url payload"));
    }
    let len = u16::from_be_bytes([plain[0], plain[1]]) as usize;
    let text = plain.get(2..2 + len).ok_or(CryptoError::Malformed("url length"))?;
    let text = std::str::from_utf8(text).map_err(|_| CryptoError::Malformed("url text"))?;
    CanonicalUrl::parse(text).map_err(|_| CryptoError::Malformed("url text"))
}

/// Encrypts a response for the originating client, bound to its request id.
///
/// The body is `status u8 || len u64 || content` padded with the content
/// ladder, so route members only learn the length class.
pub fn seal_response<R: RngCore + CryptoRng>(
    rng: &mut R,
    skey: &SessionKey,
    request_id: &[u8; 16],
    status: u8,
    content: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if content.len() > MAX_OBJECT_SIZE {
        return Err(CryptoError::TooLarge { len: content.len(), max: MAX_OBJECT_SIZE });
    }
    let padded = pad_length(content.len() as u64 + 1) as usize;
    let mut plain = Vec::with_capacity(padded);
    plain.push(status);
    plain.extend_from_slice(&(content.len() as u64).to_be_bytes());
    plain.extend_from_slice(content);
    plain.resize(padded, 0);
    Ok(seal_with_nonce(rng, skey, &response_aad(request_id), &plain))
}

/// Inverse of [`seal_response`]; returns `(status, content)`.
pub fn open_response(
    skey: &SessionKey,
    request_id: &[u8; 16],
    ciphertext: &[u8],
) -> Result<(u8, Vec<u8>), CryptoError> {
    let mut plain = open_with_nonce(skey, &response_aad(request_id), ciphertext)?;
    if plain.len() < 9 {
        return Err(CryptoError::Malformed("response payload"));
    }
    let status = plain[0];
    let len = u64::from_be_bytes(plain[1..9].try_into().expect("8 bytes")) as usize;
    if len > plain.len() - 9 {
        return Err(CryptoError::Malformed("response length"));
    }
    plain.truncate(9 + len);
    plain.drain(..9);
    Ok((status, plain))
}

fn response_aad(request_id: &[u8; 16]) -> Vec<u8> {
    let mut aad = RESPONSE_AAD.to_vec();
    aad.extend_from_slice(request_id);
    aad
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::keys::test_keys;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn session_key_seal_round_trip_is_256_bytes() {
        let kp = &test_keys::pool()[0];
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        let sealed = seal_session_key(&mut r, kp.public_key(), &s).unwrap();
        assert_eq!(sealed.len(), 256);
        assert_eq!(open_session_key(kp, &sealed).unwrap(), s);
    }

    #[test]
    fn mismatched_private_key_fails() {
        let pool = test_keys::pool();
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        let sealed = seal_session_key(&mut r, pool[0].public_key(), &s).unwrap();
        assert_eq!(open_session_key(&pool[1], &sealed), Err(CryptoError::Decryption));
        assert_eq!(open_session_key(&pool[0], &sealed[..100]), Err(CryptoError::Decryption));
    }

    #[test]
    fn url_round_trip_and_wrong_key() {
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        let u = CanonicalUrl::parse("http://a/x").unwrap();
        let ct = encrypt_url(&mut r, &s, &u);
        assert_eq!(decrypt_url(&s, &ct).unwrap(), u);
        let other = SessionKey::generate(&mut r);
        assert_eq!(decrypt_url(&other, &ct), Err(CryptoError::Tamper));
    }

    #[test]
    fn url_ciphertext_leaks_only_the_64_byte_class() {
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        // "http://a/" is 9 bytes; pad the path to reach total lengths 10 and 60.
        let short = CanonicalUrl::parse("http://a/b").unwrap();
        let long = CanonicalUrl::parse(&format!("http://a/{}", "c".repeat(51))).unwrap();
        assert_eq!(short.as_str().len(), 10);
        assert_eq!(long.as_str().len(), 60);
        let (a, b) = (encrypt_url(&mut r, &s, &short), encrypt_url(&mut r, &s, &long));
        // nonce + one 64-byte padded block + tag
        assert_eq!(a.len(), 12 + 64 + 16);
        assert_eq!(a.len(), b.len());
        let longer = CanonicalUrl::parse(&format!("http://a/{}", "c".repeat(60))).unwrap();
        assert_eq!(encrypt_url(&mut r, &s, &longer).len(), 12 + 128 + 16);
    }

    #[test]
    fn response_round_trip_is_bound_to_request_id() {
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        let rid = [3u8; 16];
        let ct = seal_response(&mut r, &s, &rid, 0, b"hello world").unwrap();
        assert_eq!(open_response(&s, &rid, &ct).unwrap(), (0, b"hello world".to_vec()));
        assert_eq!(open_response(&s, &[4u8; 16], &ct), Err(CryptoError::Tamper));
        let other = SessionKey::generate(&mut r);
        assert_eq!(open_response(&other, &rid, &ct), Err(CryptoError::Tamper));
        assert_eq!(open_response(&s, &rid, &ct[..10]), Err(CryptoError::Tamper));
    }

    #[test]
    fn response_length_is_padded_to_the_ladder() {
        let mut r = rng();
        let s = SessionKey::generate(&mut r);
        let a = seal_response(&mut r, &s, &[0; 16], 0, &[1u8; 10]).unwrap();
        let b = seal_response(&mut r, &s, &[0; 16], 0, &[1u8; 900]).unwrap();
        assert_eq!(a.len(), b.len());
    }
}
