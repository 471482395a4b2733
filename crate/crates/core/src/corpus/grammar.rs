//! Label-conditioned template grammar.
//!
//! Each label owns a weighted set of templates; a template is a sequence of
//! slots and each slot is a categorical distribution over tokens. Because
//! every probability is explicit, the exact likelihood of any sequence (and,
//! for templates with disjoint supports, the exact entropy) is available as
//! an oracle for the generator.
//!
//! Text format (`#` starts a comment):
//!
//! ```text
//! name: demo
//! seq_len: 4
//! label_prior: 0.5 0.5
//! separable: false
//!
//! template
//! label: 0
//! weight: 1
//! slot: a=0.25 b=0.75
//! slot: c
//! end
//! ```

use std::fmt::Write as _;

use super::vocab::{Vocab, BOS_TOKEN, PAD, PAD_TOKEN};
use super::LabeledSequence;
use crate::numerics::{log_sum_exp, RngStream};
use crate::{Error, Result};

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    /// `(token id, probability)` pairs with positive probability.
    pub entries: Vec<(usize, f64)>,
}

impl Slot {
    pub fn prob(&self, token: usize) -> f64 {
        self.entries
            .iter()
            .find(|(t, _)| *t == token)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn entropy(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(_, p)| -p * p.ln())
            .sum()
    }

    fn support_disjoint(&self, other: &Slot) -> bool {
        self.entries
            .iter()
            .all(|(t, _)| other.entries.iter().all(|(u, _)| t != u))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub label: usize,
    pub weight: f64,
    pub slots: Vec<Slot>,
    /// Line of the `template` keyword when parsed from text.
    pub line: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    pub name: String,
    pub seq_len: usize,
    pub label_prior: [f64; 2],
    pub separable: bool,
    pub templates: Vec<Template>,
    pub vocab: Vocab,
}

/// Exact negative log-likelihood of a sequence under the grammar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SequenceNll {
    /// `f64::INFINITY` when the sequence cannot be produced.
    pub nats: f64,
    pub impossible: bool,
}

impl Grammar {
    pub fn templates_for(&self, label: usize) -> impl Iterator<Item = &Template> {
        self.templates.iter().filter(move |t| t.label == label)
    }

    /// Slot distribution at `pos`, treating positions past the template's
    /// end as deterministic padding.
    fn slot_prob(template: &Template, pos: usize, token: usize) -> f64 {
        match template.slots.get(pos) {
            Some(slot) => slot.prob(token),
            None => (token == PAD) as u8 as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::grammar(None, "seq_len must be positive"));
        }
        check_distribution(&self.label_prior, None, "label_prior")?;
        for label in 0..2 {
            let templates: Vec<&Template> = self.templates_for(label).collect();
            if templates.is_empty() && self.label_prior[label] > 0.0 {
                return Err(Error::grammar(
                    None,
                    format!("label {label} has prior mass but no templates"),
                ));
            }
            if !templates.is_empty() {
                let weights: Vec<f64> = templates.iter().map(|t| t.weight).collect();
                check_distribution(
                    &weights,
                    templates[0].line,
                    &format!("template weights for label {label}"),
                )?;
            }
        }
        for t in &self.templates {
            if t.label > 1 {
                return Err(Error::grammar(t.line, format!("label {} not in {{0,1}}", t.label)));
            }
            if t.slots.is_empty() || t.slots.len() > self.seq_len {
                return Err(Error::grammar(
                    t.line,
                    format!(
                        "template has {} slots; expected 1..={}",
                        t.slots.len(),
                        self.seq_len
                    ),
                ));
            }
            for slot in &t.slots {
                let probs: Vec<f64> = slot.entries.iter().map(|e| e.1).collect();
                check_distribution(&probs, t.line, "slot")?;
                if slot.entries.iter().any(|(tok, _)| *tok < 2) {
                    return Err(Error::grammar(t.line, "slots may not emit reserved tokens"));
                }
            }
        }
        if self.separable {
            self.check_separable()?;
        }
        Ok(())
    }

    /// Every template must contain a slot whose support never appears in
    /// any template of the other label.
    fn check_separable(&self) -> Result<()> {
        for t in &self.templates {
            let other: Vec<usize> = self
                .templates_for(1 - t.label)
                .flat_map(|o| o.slots.iter().flat_map(|s| s.entries.iter().map(|e| e.0)))
                .collect();
            let has_marker = t
                .slots
                .iter()
                .any(|s| s.entries.iter().all(|(tok, _)| !other.contains(tok)));
            if !has_marker {
                return Err(Error::grammar(
                    t.line,
                    "separable grammar: template has no label-marker slot disjoint from the other label",
                ));
            }
        }
        Ok(())
    }

    fn sample_template(&self, label: usize, rng: &mut RngStream) -> &Template {
        let candidates: Vec<&Template> = self.templates_for(label).collect();
        let weights: Vec<f64> = candidates.iter().map(|t| t.weight).collect();
        candidates[rng.categorical(&weights)]
    }

    /// Samples `n` sequences. Item `i` uses its own derived stream, so the
    /// result does not depend on generation order.
    pub fn generate_corpus(&self, n: usize, rng: &RngStream) -> Result<Vec<LabeledSequence>> {
        if n == 0 {
            return Err(Error::InvalidArgument("corpus size must be positive".into()));
        }
        self.validate()?;
        Ok((0..n)
            .map(|i| {
                let mut r = rng.derive("corpus-item", i as u64);
                let label = r.categorical(&self.label_prior);
                self.sample_with_label(label, &mut r)
            })
            .collect())
    }

    pub fn sample_with_label(&self, label: usize, rng: &mut RngStream) -> LabeledSequence {
        let template = self.sample_template(label, rng);
        let mut tokens: Vec<usize> = template
            .slots
            .iter()
            .map(|slot| {
                let probs: Vec<f64> = slot.entries.iter().map(|e| e.1).collect();
                slot.entries[rng.categorical(&probs)].0
            })
            .collect();
        tokens.resize(self.seq_len, PAD);
        LabeledSequence { label, tokens }
    }

    /// Exact `-ln p(tokens | label)`, marginalized over the label's templates.
    pub fn exact_sequence_nll(&self, seq: &LabeledSequence) -> SequenceNll {
        let impossible = SequenceNll {
            nats: f64::INFINITY,
            impossible: true,
        };
        if seq.tokens.len() != self.seq_len || seq.label > 1 {
            return impossible;
        }
        let terms: Vec<f64> = self
            .templates_for(seq.label)
            .map(|t| {
                let mut lp = t.weight.ln();
                for (pos, &tok) in seq.tokens.iter().enumerate() {
                    lp += Self::slot_prob(t, pos, tok).ln();
                }
                lp
            })
            .collect();
        let lp = log_sum_exp(&terms);
        if lp == f64::NEG_INFINITY {
            impossible
        } else {
            SequenceNll {
                nats: -lp,
                impossible: false,
            }
        }
    }

    /// Exact entropy `H(X | y)` in nats, available when the label's templates
    /// are pairwise distinguishable (some position has disjoint supports).
    pub fn entropy(&self, label: usize) -> Option<f64> {
        let templates: Vec<&Template> = self.templates_for(label).collect();
        for (i, a) in templates.iter().enumerate() {
            for b in &templates[i + 1..] {
                let distinguishable = (0..self.seq_len).any(|pos| {
                    match (a.slots.get(pos), b.slots.get(pos)) {
                        (Some(x), Some(y)) => x.support_disjoint(y),
                        (None, None) => false,
                        (Some(x), None) | (None, Some(x)) => x.prob(PAD) == 0.0,
                    }
                });
                if !distinguishable {
                    return None;
                }
            }
        }
        Some(
            templates
                .iter()
                .map(|t| {
                    let slots: f64 = t.slots.iter().map(Slot::entropy).sum();
                    t.weight * (slots - t.weight.ln())
                })
                .sum(),
        )
    }

    /// `H(X | Y) = Σ_y p(y) H(X | y)`.
    pub fn conditional_entropy(&self) -> Option<f64> {
        let mut h = 0.0;
        for label in 0..2 {
            if self.label_prior[label] > 0.0 {
                h += self.label_prior[label] * self.entropy(label)?;
            }
        }
        Some(h)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name: {}", self.name);
        let _ = writeln!(s, "seq_len: {}", self.seq_len);
        let _ = writeln!(s, "label_prior: {} {}", self.label_prior[0], self.label_prior[1]);
        let _ = writeln!(s, "separable: {}", self.separable);
        for t in &self.templates {
            let _ = writeln!(s, "\ntemplate\nlabel: {}\nweight: {}", t.label, t.weight);
            for slot in &t.slots {
                s.push_str("slot:");
                for (tok, p) in &slot.entries {
                    let name = self.vocab.token(*tok).unwrap_or("?");
                    if *p == 1.0 {
                        let _ = write!(s, " {name}");
                    } else {
                        let _ = write!(s, " {name}={p}");
                    }
                }
                s.push('\n');
            }
            s.push_str("end\n");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Grammar> {
        let mut g = Grammar {
            name: "unnamed".into(),
            seq_len: 0,
            label_prior: [0.5, 0.5],
            separable: false,
            templates: Vec::new(),
            vocab: Vocab::new(),
        };
        let mut current: Option<Template> = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "template" {
                if current.is_some() {
                    return Err(Error::grammar(Some(lineno), "nested `template` (missing `end`)"));
                }
                current = Some(Template {
                    label: usize::MAX,
                    weight: f64::NAN,
                    slots: Vec::new(),
                    line: Some(lineno),
                });
                continue;
            }
            if line == "end" {
                let t = current
                    .take()
                    .ok_or_else(|| Error::grammar(Some(lineno), "`end` without `template`"))?;
                if t.label == usize::MAX {
                    return Err(Error::grammar(t.line, "template is missing `label`"));
                }
                if t.weight.is_nan() {
                    return Err(Error::grammar(t.line, "template is missing `weight`"));
                }
                g.templates.push(t);
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::grammar(Some(lineno), format!("expected `key: value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::grammar(Some(lineno), format!("invalid {what} `{value}`"));
            match (&mut current, key) {
                (None, "name") => g.name = value.to_string(),
                (None, "seq_len") => g.seq_len = value.parse().map_err(|_| bad("seq_len"))?,
                (None, "separable") => g.separable = value.parse().map_err(|_| bad("separable flag"))?,
                (None, "label_prior") => {
                    let parts: Vec<f64> = value
                        .split_whitespace()
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("label_prior"))?;
                    if parts.len() != 2 {
                        return Err(bad("label_prior (need two values)"));
                    }
                    check_distribution(&parts, Some(lineno), "label_prior")?;
                    g.label_prior = [parts[0], parts[1]];
                }
                (Some(t), "label") => t.label = value.parse().map_err(|_| bad("label"))?,
                (Some(t), "weight") => t.weight = value.parse().map_err(|_| bad("weight"))?,
                (Some(t), "slot") => {
                    let mut entries = Vec::new();
                    for item in value.split_whitespace() {
                        let (tok, p) = match item.split_once('=') {
                            Some((tok, p)) => (tok, p.parse::<f64>().map_err(|_| bad("probability"))?),
                            None => (item, 1.0),
                        };
                        if tok == BOS_TOKEN || tok == PAD_TOKEN {
                            return Err(Error::grammar(Some(lineno), format!("reserved token `{tok}` in slot")));
                        }
                        if !(p > 0.0 && p <= 1.0) {
                            return Err(Error::grammar(Some(lineno), format!("probability {p} outside (0, 1]")));
                        }
                        let id = g.vocab.intern(tok);
                        if entries.iter().any(|(t, _)| *t == id) {
                            return Err(Error::grammar(Some(lineno), format!("token `{tok}` repeated in slot")));
                        }
                        entries.push((id, p));
                    }
                    if entries.is_empty() {
                        return Err(Error::grammar(Some(lineno), "empty slot"));
                    }
                    let probs: Vec<f64> = entries.iter().map(|e| e.1).collect();
                    check_distribution(&probs, Some(lineno), "slot")?;
                    t.slots.push(Slot { entries });
                }
                (_, other) => {
                    return Err(Error::grammar(Some(lineno), format!("unexpected key `{other}`")));
                }
            }
        }
        if let Some(t) = current {
            return Err(Error::grammar(t.line, "template not closed with `end`"));
        }
        g.validate()?;
        Ok(g)
    }

    /// Built-in grammars: `"separable"` (label-marker tokens never shared)
    /// and `"overlapping"` (one vocabulary, label-dependent probabilities).
    pub fn preset(name: &str, seq_len: usize) -> Result<Grammar> {
        let separable = match name {
            "separable" => true,
            "overlapping" => false,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown grammar preset `{other}` (expected separable or overlapping)"
                )))
            }
        };
        let g = build_preset(name, seq_len, separable);
        g.validate()?;
        Ok(g)
    }
}

fn check_distribution(probs: &[f64], line: Option<usize>, what: &str) -> Result<()> {
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::grammar(line, format!("{what} has a negative or non-finite probability")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(Error::grammar(
            line,
            format!("{what} probabilities sum to {sum}, not 1"),
        ));
    }
    Ok(())
}

/// Position-specific token pools cycling through five word classes. The two
/// templates per label are told apart by their first token; the second
/// template also rotates its distribution at every third position, giving
/// the generator a long-range dependency to learn.
fn build_preset(name: &str, seq_len: usize, separable: bool) -> Grammar {
    const POOL_SIZES: [usize; 5] = [3, 2, 1, 3, 2];
    fn base_probs(n: usize) -> Vec<f64> {
        match n {
            1 => vec![1.0],
            2 => vec![0.7, 0.3],
            3 => vec![0.5, 0.3, 0.2],
            _ => vec![0.4, 0.3, 0.2, 0.1],
        }
    }

    let mut vocab = Vocab::new();
    let mut templates = Vec::new();
    for label in 0..2 {
        for (ti, weight) in [(0usize, 0.6), (1, 0.4)] {
            let mut slots = Vec::with_capacity(seq_len);
            for pos in 0..seq_len {
                let slot = if pos == 0 {
                    // Template-identifying opener.
                    let names = [format!("open{}", 2 * ti), format!("open{}", 2 * ti + 1)];
                    let probs = if label == 0 { [0.7, 0.3] } else { [0.3, 0.7] };
                    Slot {
                        entries: names
                            .iter()
                            .zip(probs)
                            .map(|(n, p)| (vocab.intern(n), p))
                            .collect(),
                    }
                } else if separable && pos % 5 == 2 {
                    let tag = if label == 0 { 'x' } else { 'y' };
                    Slot {
                        entries: (0..2)
                            .zip(base_probs(2))
                            .map(|(k, p)| (vocab.intern(&format!("p{pos}{tag}{k}")), p))
                            .collect(),
                    }
                } else {
                    let size = POOL_SIZES[pos % 5];
                    let mut probs = base_probs(size);
                    if label == 1 {
                        probs.reverse();
                    }
                    if ti == 1 && pos % 3 == 1 {
                        probs.rotate_right(1);
                    }
                    Slot {
                        entries: (0..size)
                            .zip(probs)
                            .map(|(k, p)| (vocab.intern(&format!("p{pos}w{k}")), p))
                            .collect(),
                    }
                };
                slots.push(slot);
            }
            templates.push(Template {
                label,
                weight,
                slots,
                line: None,
            });
        }
    }
    Grammar {
        name: name.to_string(),
        seq_len,
        label_prior: [0.5, 0.5],
        separable,
        templates,
        vocab,
    }
}
