use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Token ids for one sequence. Every id is below the vocabulary size.
pub type TokenSeq = Vec<u32>;

const UNK_KEY: &str = "<unk>";

/// Character-level vocabulary: ids follow code-point order, and the last id
/// is reserved for characters not seen when the vocabulary was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Self {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Vocab { chars }
    }

    pub fn from_chars(mut chars: Vec<char>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        Vocab { chars }
    }

    /// Number of ids, including the unknown id.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn unk_id(&self) -> u32 {
        self.chars.len() as u32
    }

    pub fn id(&self, c: char) -> u32 {
        self.chars
            .binary_search(&c)
            .map_or(self.unk_id(), |i| i as u32)
    }

    pub fn encode(&self, text: &str) -> TokenSeq {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Inverse of [`encode`](Self::encode) for in-vocabulary text; the unknown
    /// id decodes to U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.chars.get(i as usize).copied().unwrap_or('\u{FFFD}'))
            .collect()
    }
}

/// Cuts `ids` into windows of `len` tokens, advancing by `stride`.
pub fn chunk_sequences(ids: &[u32], len: usize, stride: usize) -> Vec<TokenSeq> {
    if len == 0 || stride == 0 || ids.len() < len {
        return Vec::new();
    }
    (0..=ids.len() - len)
        .step_by(stride)
        .map(|s| ids[s..s + len].to_vec())
        .collect()
}

/// Character-level tokenization into non-overlapping sequences of `len`
/// tokens; a trailing partial window is dropped.
pub fn tokenize(text: &str, vocab: &Vocab, len: usize) -> Vec<TokenSeq> {
    chunk_sequences(&vocab.encode(text), len, len)
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map: BTreeMap<String, u32> = self
            .chars
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i as u32))
            .collect();
        map.insert(UNK_KEY.to_string(), self.unk_id());
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, u32>::deserialize(d)?;
        vocab_from_map(map).map_err(serde::de::Error::custom)
    }
}

fn vocab_from_map(map: BTreeMap<String, u32>) -> Result<Vocab> {
    let mut pairs = Vec::with_capacity(map.len());
    let mut unk = None;
    for (k, v) in map {
        if k == UNK_KEY {
            unk = Some(v);
            continue;
        }
        let mut it = k.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => pairs.push((v, c)),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "vocabulary key {k:?} is not a single character"
                )))
            }
        }
    }
    pairs.sort_unstable();
    let chars: Vec<char> = pairs.iter().map(|&(_, c)| c).collect();
    let vocab = Vocab::from_chars(chars.clone());
    let consistent = pairs
        .iter()
        .enumerate()
        .all(|(i, &(id, _))| id as usize == i)
        && vocab.chars == chars
        && unk.map_or(true, |u| u == vocab.unk_id());
    if !consistent {
        return Err(Error::InvalidInput(
            "vocabulary ids must follow code-point order".into(),
        ));
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_vocab() {
        let v = Vocab::from_text("ba");
        assert_eq!(v.size(), 3);
        assert_eq!(v.encode("ab"), vec![0, 1]);
        assert_eq!(v.encode("z"), vec![2]);
        assert_eq!(v.unk_id(), 2);
    }

    #[test]
    fn roundtrip_in_vocab() {
        let text = "Call me Ishmael. Some years ago";
        let v = Vocab::from_text(text);
        assert_eq!(v.decode(&v.encode(text)), text);
    }

    #[test]
    fn ids_follow_code_points() {
        let v = Vocab::from_text("zZa ");
        assert_eq!(v.encode(" Zaz"), vec![0, 1, 2, 3]);
    }

    #[test]
    fn json_map() {
        let v = Vocab::from_text("ab—");
        let text = serde_json::to_string(&v).unwrap();
        assert!(text.contains("\"a\":0") && text.contains("\"<unk>\":3"));
        let back: Vocab = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<Vocab>(r#"{"a":1,"b":0}"#).is_err());
    }

    #[test]
    fn chunking() {
        let ids: Vec<u32> = (0..10).collect();
        assert_eq!(chunk_sequences(&ids, 4, 4).len(), 2);
        assert_eq!(chunk_sequences(&ids, 4, 1).len(), 7);
        assert!(chunk_sequences(&ids, 11, 1).is_empty());
    }
}
