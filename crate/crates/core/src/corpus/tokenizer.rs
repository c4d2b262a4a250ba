use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use super::CorpusError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const SEP_TEXT: u32 = 2;
/// Id of byte 0x00; byte `b` has id `BYTE_OFFSET + b`.
pub const BYTE_OFFSET: u32 = 3;
/// Smallest legal vocabulary: three specials plus all 256 bytes.
pub const MIN_VOCAB: usize = 259;

const FORMAT_HEADER: &str = "detour-tokenizer v1";

/// Byte-level BPE tokenizer.
///
/// Every byte has its own id, so any input encodes and decodes exactly.
/// Merges are learned over pre-split chunks (a word with at most one leading
/// space, a punctuation run, or a whitespace run) and never cross chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    OtherWs,
    Word,
    Punct,
}

fn class(b: u8) -> Class {
    match b {
        b' ' => Class::Space,
        b'\n' | b'\r' | b'\t' | 0x0b | 0x0c => Class::OtherWs,
        _ if b.is_ascii_alphanumeric() || b >= 0x80 => Class::Word,
        _ => Class::Punct,
    }
}

fn is_ws(c: Class) -> bool {
    matches!(c, Class::Space | Class::OtherWs)
}

/// Splits bytes into merge-isolated chunks. Concatenating the chunks gives
/// back the input.
pub(crate) fn chunks(bytes: &[u8]) -> Vec<&[u8]> {
    let mut out = Vec::new();
    let n = bytes.len();
    let mut i = 0;
    while i < n {
        let start = i;
        let c = class(bytes[i]);
        if c == Class::Space && i + 1 < n && !is_ws(class(bytes[i + 1])) {
            let run = class(bytes[i + 1]);
            i += 2;
            while i < n && class(bytes[i]) == run {
                i += 1;
            }
        } else if is_ws(c) {
            i += 1;
            // leave a final space for the word that follows
            while i < n && is_ws(class(bytes[i])) && !(bytes[i] == b' ' && i + 1 < n && !is_ws(class(bytes[i + 1]))) {
                i += 1;
            }
        } else {
            i += 1;
            while i < n && class(bytes[i]) == c {
                i += 1;
            }
        }
        out.push(&bytes[start..i]);
    }
    out
}

fn byte_pieces() -> Vec<Vec<u8>> {
    let mut pieces = vec![Vec::new(); BYTE_OFFSET as usize];
    pieces.extend((0..=255u8).map(|b| vec![b]));
    pieces
}

fn pairs(word: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

fn merge_word(word: &mut Vec<u32>, pair: (u32, u32), id: u32) {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

impl Tokenizer {
    /// Byte-only tokenizer (`V = 259`).
    pub fn bytes_only() -> Self {
        Tokenizer::from_merges(Vec::new())
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let mut pieces = byte_pieces();
        let mut ranks = HashMap::new();
        for (r, &(a, b)) in merges.iter().enumerate() {
            let mut p = pieces[a as usize].clone();
            p.extend_from_slice(&pieces[b as usize]);
            pieces.push(p);
            ranks.insert((a, b), r as u32);
        }
        Tokenizer { merges, ranks, pieces }
    }

    /// Learns up to `target_vocab - 259` merges from `corpus`.
    ///
    /// The most frequent adjacent pair is merged first; ties go to the
    /// smallest `(left, right)` id pair. Training stops early once no pair
    /// occurs twice.
    pub fn train(corpus: &str, target_vocab: usize) -> Result<Self, CorpusError> {
        Tokenizer::train_bytes(corpus.as_bytes(), target_vocab)
    }

    pub fn train_bytes(corpus: &[u8], target_vocab: usize) -> Result<Self, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        if target_vocab < MIN_VOCAB {
            return Err(CorpusError::VocabTooSmall { requested: target_vocab });
        }
        let mut counts: BTreeMap<&[u8], i64> = BTreeMap::new();
        for c in chunks(corpus) {
            *counts.entry(c).or_default() += 1;
        }
        let mut words: Vec<Vec<u32>> = Vec::with_capacity(counts.len());
        let mut freq: Vec<i64> = Vec::with_capacity(counts.len());
        for (w, &n) in &counts {
            words.push(w.iter().map(|&b| BYTE_OFFSET + b as u32).collect());
            freq.push(n);
        }

        let mut pair_count: HashMap<(u32, u32), i64> = HashMap::new();
        let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (wi, w) in words.iter().enumerate() {
            for p in pairs(w) {
                *pair_count.entry(p).or_default() += freq[wi];
                where_.entry(p).or_default().insert(wi);
            }
        }
        let mut heap: BinaryHeap<(i64, Reverse<(u32, u32)>)> =
            pair_count.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

        let mut merges = Vec::new();
        let mut next_id = MIN_VOCAB as u32;
        while (next_id as usize) < target_vocab {
            // entries go stale as counts change; skip those
            let best = loop {
                match heap.pop() {
                    None => break None,
                    Some((c, Reverse(p))) if pair_count.get(&p) == Some(&c) => break Some((c, p)),
                    Some(_) => continue,
                }
            };
            let Some((count, pair)) = best else { break };
            if count < 2 {
                break;
            }
            let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            let mut touched: HashSet<(u32, u32)> = HashSet::new();
            for wi in affected {
                let f = freq[wi];
                for p in pairs(&words[wi]) {
                    *pair_count.get_mut(&p).expect("pair counted") -= f;
                    touched.insert(p);
                }
                merge_word(&mut words[wi], pair, next_id);
                for p in pairs(&words[wi]) {
                    *pair_count.entry(p).or_default() += f;
                    where_.entry(p).or_default().insert(wi);
                    touched.insert(p);
                }
            }
            pair_count.remove(&pair);
            let mut touched: Vec<_> = touched.into_iter().collect();
            touched.sort_unstable();
            for p in touched {
                match pair_count.get(&p) {
                    Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                    Some(_) => {
                        pair_count.remove(&p);
                        where_.remove(&p);
                    }
                    None => {}
                }
            }
            merges.push(pair);
            next_id += 1;
        }
        Ok(Tokenizer::from_merges(merges))
    }

    /// Vocabulary size, specials included.
    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes spelled by `id`; specials spell nothing.
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        let mut cache: HashMap<&[u8], Vec<u32>> = HashMap::new();
        let mut out = Vec::with_capacity(bytes.len() / 3);
        for c in chunks(bytes) {
            let ids = cache.entry(c).or_insert_with(|| self.encode_chunk(c));
            out.extend_from_slice(ids);
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut word: Vec<u32> = chunk.iter().map(|&b| BYTE_OFFSET + b as u32).collect();
        loop {
            let best = pairs(&word).filter_map(|p| self.ranks.get(&p).map(|&r| (r, p))).min();
            let Some((rank, pair)) = best else { break };
            merge_word(&mut word, pair, MIN_VOCAB as u32 + rank);
        }
        word
    }

    /// Concatenated bytes of `ids`. Special ids contribute nothing.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, CorpusError> {
        let mut out = Vec::new();
        for &id in ids {
            let p = self.piece(id).ok_or(CorpusError::IdOutOfRange { id, vocab: self.vocab_size() })?;
            out.extend_from_slice(p);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, CorpusError> {
        String::from_utf8(self.decode_bytes(ids)?).map_err(|_| CorpusError::InvalidUtf8)
    }

    /// Serialises to the versioned text format:
    ///
    /// ```text
    /// detour-tokenizer v1
    /// vocab 300 pad 0 bos 1 sep_text 2
    /// byte 3 00
    /// ...
    /// merge 259 100 101
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(s, "vocab {} pad {PAD} bos {BOS} sep_text {SEP_TEXT}", self.vocab_size()).unwrap();
        for b in 0..=255u32 {
            writeln!(s, "byte {} {:02x}", BYTE_OFFSET + b, b).unwrap();
        }
        for (r, (a, b)) in self.merges.iter().enumerate() {
            writeln!(s, "merge {} {a} {b}", MIN_VOCAB + r).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, why: &str| CorpusError::Format { line, detail: why.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, FORMAT_HEADER)) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let (ln, meta) = lines.next().ok_or(bad(2, "missing vocab line"))?;
        let fields: Vec<&str> = meta.split_whitespace().collect();
        let expect = ["vocab", "", "pad", "0", "bos", "1", "sep_text", "2"];
        if fields.len() != expect.len() || fields.iter().zip(expect).any(|(f, e)| !e.is_empty() && *f != e) {
            return Err(bad(ln, "vocab line must be `vocab V pad 0 bos 1 sep_text 2`"));
        }
        let vocab: usize = fields[1].parse().map_err(|_| bad(ln, "vocab size is not an integer"))?;
        let mut merges = Vec::new();
        let mut bytes_seen = 0u32;
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(ln, "expected an integer"));
            match f.as_slice() {
                ["byte", id, hex] => {
                    let b = u8::from_str_radix(hex, 16).map_err(|_| bad(ln, "bad byte hex"))?;
                    if num(id)? != BYTE_OFFSET + bytes_seen || b as u32 != bytes_seen {
                        return Err(bad(ln, "byte entries must be in order"));
                    }
                    bytes_seen += 1;
                }
                ["merge", id, a, b] => {
                    let (id, a, b) = (num(id)?, num(a)?, num(b)?);
                    if bytes_seen != 256 || id as usize != MIN_VOCAB + merges.len() || a >= id || b >= id {
                        return Err(bad(ln, "merge entries must follow bytes in id order"));
                    }
                    if a < BYTE_OFFSET || b < BYTE_OFFSET {
                        return Err(bad(ln, "merges cannot use special ids"));
                    }
                    merges.push((a, b));
                }
                [] => {}
                _ => return Err(bad(ln, "unknown entry")),
            }
        }
        if bytes_seen != 256 {
            return Err(bad(0, "expected 256 byte entries"));
        }
        let tok = Tokenizer::from_merges(merges);
        if tok.vocab_size() != vocab {
            return Err(bad(2, "vocab size disagrees with entries"));
        }
        Ok(tok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_concatenate_back() {
        let s = b"Hello,  world!\n\n The end. ";
        let c = chunks(s);
        assert_eq!(c.concat(), s.to_vec());
        assert_eq!(c, vec![&b"Hello"[..], b",", b" ", b" world", b"!", b"\n\n", b" The", b" end", b".", b" "]);
    }

    #[test]
    fn learns_the_obvious_merge() {
        let tok = Tokenizer::train("abababab", 300).unwrap();
        assert_eq!(tok.merges()[0], (BYTE_OFFSET + b'a' as u32, BYTE_OFFSET + b'b' as u32));
        assert_eq!(tok.decode(&tok.encode("abab")).unwrap(), "abab");
        assert!(tok.encode("abab").len() < 4);
    }

    #[test]
    fn text_format_round_trips() {
        let tok = Tokenizer::train("the cat sat on the mat; the cat ate", 280).unwrap();
        let back = Tokenizer::from_text(&tok.to_text()).unwrap();
        assert_eq!(tok, back);
    }
}
