use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::{Error, Result};

/// Start-of-sequence id fed to the generator at the first step.
pub const BOS: usize = 0;
/// Padding id; unknown tokens map here as well.
pub const PAD: usize = 1;
pub const BOS_TOKEN: &str = "<bos>";
pub const PAD_TOKEN: &str = "<pad>";

/// Token ↔ id bijection with the two reserved ids on 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of encoding text: ids plus how many tokens were unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub unknown: usize,
}

impl Vocab {
    /// Vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.push(BOS_TOKEN);
        v.push(PAD_TOKEN);
        v
    }

    fn push(&mut self, token: &str) -> usize {
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Returns the id of `token`, adding it if new.
    pub fn intern(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push(token),
        }
    }

    /// Builds a vocabulary from whitespace-tokenized texts: most frequent
    /// tokens first, ties broken lexicographically.
    pub fn build<'a, I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<str> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for tok in text.as_ref().split_whitespace() {
                if tok != BOS_TOKEN && tok != PAD_TOKEN {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Vocab::new();
        for (tok, _) in ranked {
            v.push(tok);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Encoded {
        let mut unknown = 0;
        let ids = tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref()).unwrap_or_else(|| {
                    unknown += 1;
                    PAD
                })
            })
            .collect();
        Encoded { ids, unknown }
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.token(id).ok_or(Error::TokenOutOfRange {
                    id,
                    vocab: self.len(),
                })
            })
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            let tok = line.trim_end_matches('\r');
            if v.index.contains_key(tok) {
                return Err(Error::Config(format!(
                    "{}: duplicate token `{tok}` on line {}",
                    path.display(),
                    i + 1
                )));
            }
            v.push(tok);
        }
        if v.token(BOS) != Some(BOS_TOKEN) || v.token(PAD) != Some(PAD_TOKEN) {
            return Err(Error::Config(format!(
                "{}: lines 1-2 must hold {BOS_TOKEN} and {PAD_TOKEN}",
                path.display()
            )));
        }
        Ok(v)
    }
}

/// Keeps the first `len` tokens and pads shorter inputs with [`PAD`].
pub fn crop_pad(tokens: &[usize], len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().copied().take(len).collect();
    out.resize(len, PAD);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids() {
        let v = Vocab::new();
        assert_eq!(v.id(BOS_TOKEN), Some(0));
        assert_eq!(v.id(PAD_TOKEN), Some(1));
    }

    #[test]
    fn crop_keeps_prefix_and_pad_fills() {
        let long: Vec<usize> = (0..45).collect();
        assert_eq!(crop_pad(&long, 40), (0..40).collect::<Vec<_>>());
        assert_eq!(crop_pad(&[7, 8, 9], 5), vec![7, 8, 9, PAD, PAD]);
    }

    #[test]
    fn unknown_tokens_are_counted() {
        let v = Vocab::build(["a b b c"].iter());
        assert_eq!(v.token(2), Some("b"));
        let e = v.encode(&["a", "zzz", "c", "qq"]);
        assert_eq!(e.unknown, 2);
        assert_eq!(e.ids[1], PAD);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("vocab-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        let v = Vocab::build(["x y z y"].iter());
        v.write(&path).unwrap();
        assert_eq!(Vocab::read(&path).unwrap(), v);
        std::fs::remove_dir_all(&dir).ok();
    }
}
