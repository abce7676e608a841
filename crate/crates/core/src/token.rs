//! Completion tokens: HMAC-SHA256 of the session id under a server secret,
//! base32-encoded and truncated. Verifiable without a token table.

use hmac::{Hmac, Mac};
use sha2::Sha256;

pub const TOKEN_LEN: usize = 12;

pub fn completion_token(secret: &[u8], session_id: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(session_id.as_bytes());
    let digest = mac.finalize().into_bytes();
    let mut token = data_encoding::BASE32_NOPAD.encode(&digest);
    token.truncate(TOKEN_LEN);
    token
}

pub fn verify_token(secret: &[u8], session_id: &str, token: &str) -> bool {
    let expected = completion_token(secret, session_id);
    // constant-time comparison over equal-length ASCII
    expected.len() == token.len()
        && expected
            .bytes()
            .zip(token.bytes())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
}
