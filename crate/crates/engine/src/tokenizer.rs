// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE tokenizer reading GPT-2-style `vocab.json` + `merges.txt`.
//!
//! Text is split with the GPT-2 pre-tokenization pattern, each piece is
//! mapped to its UTF-8 bytes, and merges are applied by ascending rank. Every
//! byte has a base token, so any UTF-8 input encodes and
//! `decode(encode(s)) == s`.
//!
//! Special tokens are not split out of the input text; callers add BOS/EOS
//! ids explicitly.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;

use crate::error::{EngineError, Result};

const GPT2_PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

#[derive(Debug)]
pub struct Tokenizer {
    pattern: Regex,
    byte_ids: [u32; 256],
    /// `(left, right) -> (rank, merged)`
    merges: HashMap<(u32, u32), (u32, u32)>,
    decoder: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
}

/// GPT-2's reversible byte → printable-char table.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    table
}

impl Tokenizer {
    pub fn from_files(vocab: impl AsRef<Path>, merges: impl AsRef<Path>) -> Result<Self> {
        let vocab = vocab.as_ref();
        let merges = merges.as_ref();
        let vocab_text = std::fs::read_to_string(vocab).map_err(|e| EngineError::io(vocab, e))?;
        let merges_text = std::fs::read_to_string(merges).map_err(|e| EngineError::io(merges, e))?;
        Self::from_strs(&vocab_text, &merges_text)
    }

    /// Loads `vocab.json` and `merges.txt` from a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::from_files(dir.join("vocab.json"), dir.join("merges.txt"))
    }

    pub fn from_strs(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let vocab: HashMap<String, u32> =
            serde_json::from_str(vocab_json).map_err(|e| EngineError::Tokenizer(format!("bad vocab JSON: {e}")))?;
        let merges: Vec<(String, String)> = merges_txt
            .lines()
            .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
            .map(|l| {
                l.split_once(' ')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| EngineError::Tokenizer(format!("bad merge line `{l}`")))
            })
            .collect::<Result<_>>()?;
        Self::new(vocab, &merges)
    }

    pub fn new(vocab: HashMap<String, u32>, merges: &[(String, String)]) -> Result<Self> {
        let table = bytes_to_unicode();
        let mut char_to_byte = HashMap::with_capacity(256);
        for (b, c) in table.iter().enumerate() {
            char_to_byte.insert(*c, b as u8);
        }
        let to_bytes = |token: &str| -> Result<Vec<u8>> {
            token
                .chars()
                .map(|c| {
                    char_to_byte
                        .get(&c)
                        .copied()
                        .ok_or_else(|| EngineError::Tokenizer(format!("token `{token}` has non byte-level char {c:?}")))
                })
                .collect()
        };

        let size = vocab.values().map(|&id| id as usize + 1).max().unwrap_or(0);
        let mut decoder = vec![Vec::new(); size];
        let mut token_to_id = HashMap::with_capacity(vocab.len());
        for (token, &id) in &vocab {
            let bytes = to_bytes(token)?;
            decoder[id as usize] = bytes.clone();
            if token_to_id.insert(bytes, id).is_some() {
                return Err(EngineError::Tokenizer(format!("duplicate token `{token}`")));
            }
        }

        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = *token_to_id
                .get(&vec![b])
                .ok_or_else(|| EngineError::Tokenizer(format!("vocabulary lacks base token for byte {b:#04x}")))?;
        }

        let mut merge_map = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let (ab, bb) = (to_bytes(a)?, to_bytes(b)?);
            let (Some(&left), Some(&right)) = (token_to_id.get(&ab), token_to_id.get(&bb)) else {
                return Err(EngineError::Tokenizer(format!("merge `{a} {b}` uses unknown token")));
            };
            let mut joined = ab;
            joined.extend_from_slice(&bb);
            let Some(&merged) = token_to_id.get(&joined) else {
                return Err(EngineError::Tokenizer(format!("merge `{a} {b}` result not in vocab")));
            };
            // first occurrence wins, as with GPT-2's rank table
            merge_map.entry((left, right)).or_insert((rank as u32, merged));
        }

        let pattern = Regex::new(GPT2_PATTERN).expect("static pattern compiles");
        Ok(Self {
            pattern,
            byte_ids,
            merges: merge_map,
            decoder,
            token_to_id,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    /// Id of a token given as raw bytes (e.g. `b"<|endoftext|>"`).
    pub fn token_id(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in self.pre_tokenize(text) {
            let mut ids: Vec<u32> = piece.bytes().map(|b| self.byte_ids[b as usize]).collect();
            self.merge(&mut ids);
            out.extend(ids);
        }
        out
    }

    fn pre_tokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut pieces = Vec::new();
        let mut last = 0;
        for m in self.pattern.find_iter(text) {
            match m {
                Ok(m) => {
                    // the pattern covers every char, but keep any gap rather than drop it
                    if m.start() > last {
                        pieces.push(&text[last..m.start()]);
                    }
                    pieces.push(m.as_str());
                    last = m.end();
                }
                Err(e) => {
                    log::warn!("pre-tokenizer backtrack limit hit ({e}); using remainder as one piece");
                    break;
                }
            }
        }
        if last < text.len() {
            pieces.push(&text[last..]);
        }
        pieces
    }

    /// Repeatedly merges the lowest-ranked adjacent pair, all occurrences
    /// left to right, until no pair has a rank.
    fn merge(&self, ids: &mut Vec<u32>) {
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&(rank, _)| (rank, w[0], w[1])))
                .min();
            let Some((_, left, right)) = best else {
                break;
            };
            let merged = self.merges[&(left, right)].1;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == left && ids[i + 1] == right {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.decoder.get(id as usize).ok_or(EngineError::TokenOutOfRange {
                id,
                vocab: self.decoder.len(),
            })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decodes ids; invalid UTF-8 (only possible for partial sequences) is
    /// replaced lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}
