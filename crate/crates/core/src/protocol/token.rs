//! Signed, time-limited join tokens.
//!
//! The world node issues a token when an agent first joins and checks it on
//! every subsequent envelope. The MAC is HMAC-SHA256 over a length-prefixed
//! encoding of the token fields; the algorithm name travels in the token.

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

/// Algorithm identifier recorded in every token.
pub const TOKEN_ALG: &str = "HMAC-SHA256";

/// Default token lifetime in seconds.
pub const DEFAULT_TOKEN_TTL_S: u64 = 3600;

/// Secret key held by the world node.
#[derive(Clone)]
pub struct TokenKey(Vec<u8>);

impl TokenKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    /// A random 256-bit key.
    pub fn generate(rng: &mut impl rand::RngCore) -> Self {
        let mut bytes = vec![0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("HMAC accepts keys of any length")
    }
}

impl std::fmt::Debug for TokenKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinToken {
    pub subject: String,
    pub world: String,
    pub issued_at: u64,
    pub expires_at: u64,
    pub alg: String,
    /// Hex-encoded MAC over all of the fields above.
    pub signature: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("token signature does not match")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("unsupported token algorithm")]
    UnsupportedAlg,
}

fn signing_input(subject: &str, world: &str, issued_at: u64, expires_at: u64, alg: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + subject.len() + world.len());
    for field in [alg.as_bytes(), subject.as_bytes(), world.as_bytes()] {
        buf.extend_from_slice(&(field.len() as u64).to_be_bytes());
        buf.extend_from_slice(field);
    }
    buf.extend_from_slice(&issued_at.to_be_bytes());
    buf.extend_from_slice(&expires_at.to_be_bytes());
    buf
}

/// Issues a token for `subject` valid from `now_s` for `ttl_s` seconds.
///
/// Panics if `ttl_s` is zero.
pub fn sign_token(subject: &str, world: &str, ttl_s: u64, key: &TokenKey, now_s: u64) -> JoinToken {
    assert!(ttl_s > 0, "token ttl must be positive");
    let expires_at = now_s + ttl_s;
    let mut mac = key.mac();
    mac.update(&signing_input(subject, world, now_s, expires_at, TOKEN_ALG));
    JoinToken {
        subject: subject.to_owned(),
        world: world.to_owned(),
        issued_at: now_s,
        expires_at,
        alg: TOKEN_ALG.to_owned(),
        signature: hex::encode(mac.finalize().into_bytes()),
    }
}

/// Accepts the token iff its MAC verifies under `key` and `now_s < expires_at`.
pub fn verify_token(token: &JoinToken, key: &TokenKey, now_s: u64) -> Result<(), TokenError> {
    if token.alg != TOKEN_ALG {
        return Err(TokenError::UnsupportedAlg);
    }
    let signature = hex::decode(&token.signature).map_err(|_| TokenError::BadSignature)?;
    let mut mac = key.mac();
    mac.update(&signing_input(
        &token.subject,
        &token.world,
        token.issued_at,
        token.expires_at,
        &token.alg,
    ));
    mac.verify_slice(&signature).map_err(|_| TokenError::BadSignature)?;
    if now_s >= token.expires_at {
        return Err(TokenError::Expired);
    }
    Ok(())
}
