//! Canonical number formatting and hashing shared by certificates and
//! output headers. Floats are printed with 17 significant digits so that
//! round-tripping through text is exact.

use sha2::{Digest, Sha256};

/// 17 significant digits; parses back to the identical f64.
pub(crate) fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn sha256_hex(data: &str) -> String {
    let mut h = Sha256::new();
    h.update(data.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short (16 hex char) digest used to tag instances in CSV rows.
pub(crate) fn short_hash(data: &str) -> String {
    sha256_hex(data)[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f17_round_trips() {
        for &x in &[0.3, 1.0 / 3.0, 2.5e-13, 1e300, -0.0, 42.0] {
            let s = f17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(sha256_hex("").len(), 64);
        assert_eq!(short_hash("abc").len(), 16);
        assert_eq!(sha256_hex("x"), sha256_hex("x"));
        assert_ne!(sha256_hex("x"), sha256_hex("y"));
    }
}
