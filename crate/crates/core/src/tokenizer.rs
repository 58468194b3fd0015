//! Byte-pair subword vocabulary with greedy longest-match encoding.
//!
//! Every word is encoded independently. The first symbol of a word carries a
//! leading [`WORD_START`] marker so that decoding can restore word boundaries
//! from ids alone, and so a word may span several tokens (`"chop"` becomes
//! `["▁ch", "op"]` once the `op` merge exists).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Marker prefixed to the first symbol of every word.
pub const WORD_START: char = '\u{2581}';

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<bos>", "<unk>"];
const VOCAB_HEADER: &str = "lmagent-vocab 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    merges: Vec<(u32, u32)>,
    index: HashMap<String, u32>,
    max_entry_chars: usize,
}

/// Token ids of a text plus the token range covered by each word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub token_ids: Vec<u32>,
    pub word_spans: Vec<(usize, usize)>,
    pub source_text: String,
}

impl TokenizedText {
    pub fn n_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn n_words(&self) -> usize {
        self.word_spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

fn symbols_of(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { format!("{WORD_START}{c}") } else { c.to_string() })
        .collect()
}

impl Vocab {
    fn from_parts(entries: Vec<String>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocab entry {e:?}")));
            }
        }
        for &(a, b) in &merges {
            if a as usize >= entries.len() || b as usize >= entries.len() {
                return Err(Error::Format(format!("merge ({a},{b}) references a missing entry")));
            }
        }
        let max_entry_chars = entries.iter().map(|e| e.chars().count()).max().unwrap_or(1);
        Ok(Self { entries, merges, index, max_entry_chars })
    }

    /// Builds a vocabulary of `target_size` subword entries (special tokens
    /// excluded) by greedy pair merging over the whitespace words of `corpus`.
    ///
    /// Both the word-initial and the word-internal form of every corpus
    /// character are always present, so the alphabet alone can encode any
    /// text over the corpus characters.
    pub fn build<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Self> {
        let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in corpus {
            for w in line.as_ref().split_whitespace() {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }

        let mut chars: Vec<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut alphabet: Vec<String> = chars.iter().map(|c| format!("{WORD_START}{c}")).collect();
        alphabet.extend(chars.iter().map(|c| c.to_string()));
        alphabet.sort();
        alphabet.dedup();
        if target_size < alphabet.len() {
            return Err(Error::Config(format!(
                "target vocabulary size {target_size} is below the alphabet size {}",
                alphabet.len()
            )));
        }

        let mut entries: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        entries.extend(alphabet);
        let mut index: HashMap<String, u32> =
            entries.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();

        let mut words: Vec<(Vec<u32>, u64)> = word_counts
            .iter()
            .map(|(w, &n)| (symbols_of(w).iter().map(|s| index[s]).collect(), n))
            .collect();
        let mut merges = Vec::new();
        let limit = target_size + SPECIALS.len();

        while entries.len() < limit {
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (syms, n) in &words {
                for p in syms.windows(2) {
                    *pair_counts.entry((p[0], p[1])).or_default() += n;
                }
            }
            // Highest count first, ties broken by the smaller id pair.
            let Some((&best, _)) = pair_counts
                .iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            let merged = format!("{}{}", entries[best.0 as usize], entries[best.1 as usize]);
            let new_id = match index.get(&merged) {
                Some(&id) => id,
                None => {
                    let id = entries.len() as u32;
                    entries.push(merged.clone());
                    index.insert(merged, id);
                    id
                }
            };
            merges.push(best);
            for (syms, _) in &mut words {
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && (syms[i], syms[i + 1]) == best {
                        out.push(new_id);
                        i += 2;
                    } else {
                        out.push(syms[i]);
                        i += 1;
                    }
                }
                *syms = out;
            }
        }
        Self::from_parts(entries, merges)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn id_of(&self, entry: &str) -> Option<u32> {
        self.index.get(entry).copied()
    }

    /// Number of single-character entries (both word-initial and internal forms).
    pub fn alphabet_size(&self) -> usize {
        self.entries[SPECIALS.len()..]
            .iter()
            .filter(|e| e.trim_start_matches(WORD_START).chars().count() == 1)
            .count()
    }

    /// Display form of a token: the entry with its word-start marker removed.
    pub fn token_str(&self, id: u32) -> &str {
        self.entries
            .get(id as usize)
            .map(|e| e.trim_start_matches(WORD_START))
            .unwrap_or("<?>")
    }

    pub fn encode(&self, text: &str) -> TokenizedText {
        let mut token_ids = Vec::new();
        let mut word_spans = Vec::new();
        let mut buf = String::new();
        for word in text.split_whitespace() {
            let start = token_ids.len();
            let chars: Vec<char> = word.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                let max_len = self.max_entry_chars.min(chars.len() - i);
                let mut matched = None;
                for len in (1..=max_len).rev() {
                    buf.clear();
                    if i == 0 {
                        buf.push(WORD_START);
                    }
                    buf.extend(&chars[i..i + len]);
                    if let Some(&id) = self.index.get(buf.as_str()) {
                        matched = Some((id, len));
                        break;
                    }
                }
                let (id, len) = matched.unwrap_or((UNK_ID, 1));
                token_ids.push(id);
                i += len;
            }
            word_spans.push((start, token_ids.len()));
        }
        TokenizedText { token_ids, word_spans, source_text: text.to_string() }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let entry = self
                .entries
                .get(id as usize)
                .ok_or_else(|| Error::InvalidInput(format!("token id {id} out of range ({})", self.len())))?;
            if id == UNK_ID {
                out.push('\u{FFFD}');
                continue;
            }
            if (id as usize) < SPECIALS.len() {
                continue;
            }
            for c in entry.chars() {
                if c == WORD_START {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                } else {
                    out.push(c);
                }
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_HEADER}");
        let _ = writeln!(s, "entries {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(s, "{e}");
        }
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Format(format!("vocab file: {m}"));
        match lines.next() {
            Some(h) if h == VOCAB_HEADER => {}
            Some(h) => return Err(bad(&format!("unsupported header {h:?}"))),
            None => return Err(bad("empty file")),
        }
        let count = |line: Option<&str>, key: &str| -> Result<usize> {
            line.and_then(|l| l.strip_prefix(key))
                .and_then(|n| n.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected `{key} <n>`")))
        };
        let n = count(lines.next(), "entries ")?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(lines.next().ok_or_else(|| bad("truncated entry list"))?.to_string());
        }
        if entries.len() < SPECIALS.len() || entries[..SPECIALS.len()] != SPECIALS {
            return Err(bad("missing special tokens"));
        }
        let m = count(lines.next(), "merges ")?;
        let mut merges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| bad("truncated merge list"))?;
            let mut it = line.split(' ').map(str::parse::<u32>);
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => merges.push((a, b)),
                _ => return Err(bad(&format!("malformed merge line {line:?}"))),
            }
        }
        Self::from_parts(entries, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
