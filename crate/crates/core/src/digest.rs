use sha2::{Digest, Sha256};

/// Stable 64-bit digest of the concatenation of `parts`.
///
/// The first eight bytes of SHA-256, big-endian. Used for mock seeding and
/// content-addressed image names, so the value must never change across
/// releases.
pub fn stable_digest(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    let out = hasher.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&out[..8]);
    u64::from_be_bytes(first)
}

/// Lowercase 16-digit hex rendering of a digest.
pub fn digest_hex(value: u64) -> String {
    format!("{value:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concatenation_is_what_is_hashed() {
        assert_eq!(stable_digest(&[b"ab", b"c"]), stable_digest(&[b"abc"]));
    }

    #[test]
    fn pinned_value() {
        // sha256("abc") = ba7816bf8f01cfea...
        assert_eq!(stable_digest(&[b"abc"]), 0xba7816bf8f01cfea);
        assert_eq!(digest_hex(0xba), "00000000000000ba");
    }
}
