//! Byte-level BPE tokenizer with reserved special tokens.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::params::sha256_hex;
use crate::prompt::{HISTORY_HEADER, QUERY_HEADER, SPEECH_MARKER, SYSTEM_HEADER};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SPEECH_ID: u32 = 4;

const SPECIALS: [&str; 8] = [
    "<pad>",
    "<unk>",
    "<bos>",
    "<eos>",
    SPEECH_MARKER,
    SYSTEM_HEADER,
    HISTORY_HEADER,
    QUERY_HEADER,
];
/// Specials that round-trip through text; pad/bos/eos decode to nothing.
const LITERAL_SPECIALS: [u32; 4] = [4, 5, 6, 7];
const FILE_HEADER: &str = "rolespeak-bpe v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTokenSequence {
    pub tokens: Vec<u32>,
}

impl TextTokenSequence {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        for (i, &t) in self.tokens.iter().enumerate() {
            if t as usize >= vocab {
                return Err(CoreError::TokenRange {
                    id: t as usize,
                    vocab,
                });
            }
            if t == EOS_ID && i + 1 != self.tokens.len() {
                return Err(CoreError::validation("tokens", "EOS before the end"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    alphabet: Vec<u8>,
    merges: Vec<(u32, u32)>,
    byte_to_id: HashMap<u8, u32>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

/// Splits into chunks of an optional leading space plus a non-space run, or a whitespace run.
fn pretokenize(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let ws = bytes[i].is_ascii_whitespace();
        let mut j = i + 1;
        if ws && bytes[i] == b' ' && j < bytes.len() && !bytes[j].is_ascii_whitespace() {
            // space glued to the following word
            while j < bytes.len() && !bytes[j].is_ascii_whitespace() {
                j += 1;
            }
        } else {
            while j < bytes.len()
                && bytes[j].is_ascii_whitespace() == ws
                && !(ws && bytes[j] == b' ' && j + 1 < bytes.len() && !bytes[j + 1].is_ascii_whitespace())
            {
                j += 1;
            }
        }
        // Never split inside a UTF-8 sequence (whitespace tests are ASCII-only, so
        // boundaries always land on char boundaries).
        out.push(&text[start..j]);
        start = j;
        i = j;
    }
    out
}

/// Splits text around literal special markers.
fn split_specials(text: &str) -> Vec<(Option<u32>, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let hit = LITERAL_SPECIALS
            .iter()
            .filter_map(|&id| rest.find(SPECIALS[id as usize]).map(|p| (p, id)))
            .min_by_key(|&(p, id)| (p, std::cmp::Reverse(SPECIALS[id as usize].len())));
        match hit {
            Some((p, id)) => {
                if p > 0 {
                    out.push((None, &rest[..p]));
                }
                out.push((Some(id), SPECIALS[id as usize]));
                rest = &rest[p + SPECIALS[id as usize].len()..];
            }
            None => {
                out.push((None, rest));
                break;
            }
        }
    }
    out
}

impl Tokenizer {
    fn build(alphabet: Vec<u8>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let base = SPECIALS.len() as u32;
        let byte_to_id: HashMap<u8, u32> = alphabet
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, base + i as u32))
            .collect();
        if byte_to_id.len() != alphabet.len() {
            return Err(CoreError::Config("duplicate byte in tokenizer alphabet".into()));
        }
        let mut pieces: Vec<Vec<u8>> = SPECIALS.iter().map(|s| s.as_bytes().to_vec()).collect();
        pieces.extend(alphabet.iter().map(|&b| vec![b]));
        let mut ranks = HashMap::new();
        for (r, &(a, b)) in merges.iter().enumerate() {
            let n = pieces.len() as u32;
            if a >= n || b >= n || a < base || b < base {
                return Err(CoreError::Config(format!("merge {r} references unknown ids")));
            }
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
            ranks.insert((a, b), r as u32);
        }
        Ok(Self {
            alphabet,
            merges,
            byte_to_id,
            ranks,
            pieces,
        })
    }

    /// Learns up to `num_merges` merges from the given texts.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, num_merges: usize) -> Self {
        let mut words: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for text in texts {
            for (special, seg) in split_specials(text) {
                if special.is_some() {
                    continue;
                }
                for w in pretokenize(seg) {
                    *words.entry(w.as_bytes().to_vec()).or_default() += 1;
                }
            }
        }
        let mut alphabet: Vec<u8> = words.keys().flatten().copied().collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        let base = SPECIALS.len() as u32;
        let byte_id = |b: u8| base + alphabet.binary_search(&b).expect("seen byte") as u32;
        let mut seqs: Vec<(Vec<u32>, usize)> = words
            .iter()
            .map(|(w, &c)| (w.iter().map(|&b| byte_id(b)).collect(), c))
            .collect();
        let mut merges = Vec::new();
        let mut next_id = base + alphabet.len() as u32;
        while merges.len() < num_merges {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for (s, c) in &seqs {
                for w in s.windows(2) {
                    *counts.entry((w[0], w[1])).or_default() += c;
                }
            }
            let Some((&pair, &freq)) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            else {
                break;
            };
            if freq < 2 {
                break;
            }
            for (s, _) in &mut seqs {
                merge_in_place(s, pair, next_id);
            }
            merges.push(pair);
            next_id += 1;
        }
        Self::build(alphabet, merges).expect("consistent trained vocabulary")
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    fn encode_word(&self, word: &[u8], out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = word
            .iter()
            .map(|b| self.byte_to_id.get(b).copied().unwrap_or(UNK_ID))
            .collect();
        loop {
            let best = ids
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = (SPECIALS.len() + self.alphabet.len()) as u32 + rank;
            merge_in_place(&mut ids, pair, new_id);
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &str) -> TextTokenSequence {
        let mut tokens = Vec::new();
        for (special, seg) in split_specials(text) {
            match special {
                Some(id) => tokens.push(id),
                None => {
                    for w in pretokenize(seg) {
                        self.encode_word(w.as_bytes(), &mut tokens);
                    }
                }
            }
        }
        TextTokenSequence { tokens }
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &t in tokens {
            match t {
                PAD_ID | BOS_ID | EOS_ID => {}
                UNK_ID => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                _ => {
                    if let Some(p) = self.pieces.get(t as usize) {
                        bytes.extend_from_slice(p);
                    }
                }
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn piece(&self, id: u32) -> Option<String> {
        self.pieces
            .get(id as usize)
            .map(|p| String::from_utf8_lossy(p).into_owned())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        s.push_str(FILE_HEADER);
        s.push('\n');
        s.push_str("specials");
        for sp in SPECIALS {
            s.push(' ');
            s.push_str(sp);
        }
        s.push('\n');
        s.push_str("alphabet");
        for b in &self.alphabet {
            s.push_str(&format!(" {b:02x}"));
        }
        s.push('\n');
        for (a, b) in &self.merges {
            s.push_str(&format!("merge {a} {b}\n"));
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let bad = |m: &str| CoreError::Config(format!("tokenizer file: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(FILE_HEADER) {
            return Err(bad("missing header"));
        }
        let specials: Vec<&str> = lines
            .next()
            .and_then(|l| l.strip_prefix("specials "))
            .ok_or_else(|| bad("missing specials"))?
            .split(' ')
            .collect();
        if specials != SPECIALS {
            return Err(bad("special token list differs"));
        }
        let alpha_line = lines.next().ok_or_else(|| bad("missing alphabet"))?;
        let alpha_line = alpha_line
            .strip_prefix("alphabet")
            .ok_or_else(|| bad("missing alphabet"))?;
        let alphabet = alpha_line
            .split_whitespace()
            .map(|h| u8::from_str_radix(h, 16).map_err(|_| bad("bad alphabet byte")))
            .collect::<Result<Vec<u8>>>()?;
        let mut merges = Vec::new();
        for l in lines {
            let mut it = l.split(' ');
            if it.next() != Some("merge") {
                return Err(bad("unexpected line"));
            }
            let a = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad merge"))?;
            let b = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad merge"))?;
            merges.push((a, b));
        }
        Self::build(alphabet, merges)
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| CoreError::io(path, e))
    }

    /// Loads and, when `expected_hash` is given, verifies the content hash.
    pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        if let Some(h) = expected_hash {
            let actual = sha256_hex(text.as_bytes());
            if actual != h {
                return Err(CoreError::Config(format!(
                    "tokenizer hash mismatch: expected {h}, found {actual}"
                )));
            }
        }
        Self::from_file_string(&text)
    }
}

fn merge_in_place(ids: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}
