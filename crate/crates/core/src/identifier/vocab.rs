use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::provenance::is_header;
use crate::scalar::Scalar;

pub type TokenId = u32;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";

/// Token strings with dense indices. Base tokens always come first, so
/// appending scheme tokens never moves an existing index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    base_size: usize,
}

impl Vocabulary {
    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const PAD: TokenId = 2;

    /// Reserved tokens, single digits `0`-`9`, digit pairs `00`-`99`, then every
    /// caption word of the corpus in order of first appearance.
    pub fn base<T: Scalar>(corpus: &Corpus<T>) -> Self {
        let mut v = Self::reserved_and_digits();
        for r in corpus.records() {
            for caption in &r.captions {
                for word in caption.split_whitespace() {
                    v.push(word);
                }
            }
        }
        v.base_size = v.tokens.len();
        v
    }

    fn reserved_and_digits() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            base_size: 0,
        };
        for t in [BOS_TOKEN, EOS_TOKEN, PAD_TOKEN] {
            v.push(t);
        }
        for d in 0..10 {
            v.push(&d.to_string());
        }
        for d in 0..100 {
            v.push(&format!("{d:02}"));
        }
        v.base_size = v.tokens.len();
        v
    }

    /// Appends `token` unless present; returns its index either way.
    pub fn push(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    /// Stable fingerprint of the token list, stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("sha256 is 32 bytes"))
    }

    /// One token per line; the line number (after an optional header) is the index.
    pub fn write(&self, path: &Path, header: Option<&str>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if let Some(h) = header {
            writeln!(w, "{h}")?;
        }
        writeln!(w, "#base_size={}", self.base_size)?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().peekable();
        if let Some(Ok(first)) = lines.peek() {
            if is_header(first) {
                lines.next();
            }
        }
        let mut base_size = None;
        if let Some(Ok(meta)) = lines.peek() {
            if let Some(n) = meta.strip_prefix("#base_size=") {
                base_size = Some(n.parse::<usize>().map_err(io::Error::other)?);
                lines.next();
            }
        }
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            base_size: 0,
        };
        for line in lines {
            let line = line?;
            if v.index.contains_key(&line) {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("duplicate token `{line}` in vocabulary"),
                ));
            }
            v.push(&line);
        }
        v.base_size = base_size.unwrap_or(v.tokens.len());
        Ok(v)
    }
}
