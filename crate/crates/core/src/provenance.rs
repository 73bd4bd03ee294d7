//! Header line written at the top of every text artifact.
//!
//! Readers skip any line starting with [`HEADER_PREFIX`], so files stay
//! loadable whether or not they carry one.

use std::fmt;

use sha2::{Digest, Sha256};

pub const HEADER_PREFIX: &str = "#!genret";

/// The three named seeds every experiment is driven by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Seeds {
    pub data: u64,
    pub identifier: u64,
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
}

impl Provenance {
    pub fn new(config_text: &str, seeds: Seeds) -> Self {
        Self {
            config_hash: short_hash(config_text.as_bytes()),
            seeds,
        }
    }

    pub fn header_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{HEADER_PREFIX} version={} config={} seeds=data:{},identifier:{},training:{}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash,
            self.seeds.data,
            self.seeds.identifier,
            self.seeds.training
        )
    }
}

pub fn is_header(line: &str) -> bool {
    line.starts_with(HEADER_PREFIX)
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_recognised() {
        let p = Provenance::new("a=1", Seeds { data: 1, identifier: 2, training: 3 });
        let line = p.header_line();
        assert!(is_header(&line));
        assert!(line.contains("seeds=data:1,identifier:2,training:3"));
        assert_eq!(p.config_hash.len(), 16);
    }
}
