//! Synthetic label-conditioned corpora, vocabularies, splitting and
//! skip-gram embedding pretraining.

mod embed;
mod grammar;
mod split;
mod vocab;

use std::io::{BufRead, Write};
use std::path::Path;

pub use embed::{pretrain_embeddings, SkipGramConfig};
pub use grammar::{Grammar, SequenceNll, Slot, Template};
pub use split::{split, SplitDataset, DEFAULT_RATIOS};
pub use vocab::{crop_pad, Encoded, Vocab, BOS, BOS_TOKEN, PAD, PAD_TOKEN};

use crate::{Error, Result};

/// A fixed-length token sequence with its condition label.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledSequence {
    pub label: usize,
    pub tokens: Vec<usize>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Writes `<label>\t<tok tok ...>` lines.
pub fn write_corpus(path: &Path, corpus: &[LabeledSequence], vocab: &Vocab) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in corpus {
        writeln!(out, "{}\t{}", s.label, vocab.decode(&s.tokens)?.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Raw corpus lines before encoding.
pub fn read_corpus_text(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `<label>\\t<tokens>`", path.display(), i + 1))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::Config(format!("{}:{}: bad label `{label}`", path.display(), i + 1))
        })?;
        if label > 1 {
            return Err(Error::LabelOutOfRange(label));
        }
        out.push((label, text.to_string()));
    }
    Ok(out)
}

/// Reads, encodes and crops/pads a corpus file to `seq_len`. Returns the
/// sequences and the number of unknown tokens mapped to UNK.
pub fn read_corpus(path: &Path, vocab: &Vocab, seq_len: usize) -> Result<(Vec<LabeledSequence>, usize)> {
    let mut unknown = 0;
    let seqs = read_corpus_text(path)?
        .into_iter()
        .map(|(label, text)| {
            let toks: Vec<&str> = text.split_whitespace().collect();
            let enc = vocab.encode(&toks);
            unknown += enc.unknown;
            LabeledSequence {
                label,
                tokens: crop_pad(&enc.ids, seq_len),
            }
        })
        .collect();
    Ok((seqs, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn decode_encode_round_trip_on_grammar_output() {
        let g = Grammar::preset("overlapping", 20).unwrap();
        for s in g.generate_corpus(200, &RngStream::new(1, 0)).unwrap() {
            let text = g.vocab.decode(&s.tokens).unwrap();
            assert_eq!(g.vocab.encode(&text).ids, s.tokens);
        }
    }

    #[test]
    fn corpus_file_round_trip() {
        let g = Grammar::preset("separable", 12).unwrap();
        let corpus = g.generate_corpus(30, &RngStream::new(2, 0)).unwrap();
        let dir = std::env::temp_dir().join(format!("corpus-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.txt");
        write_corpus(&path, &corpus, &g.vocab).unwrap();
        let (back, unk) = read_corpus(&path, &g.vocab, 12).unwrap();
        assert_eq!(unk, 0);
        assert_eq!(back, corpus);
        std::fs::remove_dir_all(&dir).ok();
    }
}
