use std::collections::HashMap;

/// Token vocabulary with two reserved ids: 0 for padding, 1 for unknown
/// tokens. Real tokens start at id 2 in frequency order (descending count,
/// then lexicographic).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    map: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const RESERVED: usize = 2;

    pub fn new() -> Self {
        Vocabulary::default()
    }

    /// Append a token with its count; id is assigned in push order.
    pub fn push(&mut self, token: &str, count: u64) -> u32 {
        let id = (self.tokens.len() + Self::RESERVED) as u32;
        self.map.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        self.counts.push(count);
        id
    }

    /// Id of a known token, if any.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.map.get(token).copied()
    }

    /// Id of a token, falling back to the unknown id.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.lookup(token).unwrap_or(Self::UNK)
    }

    /// Number of real tokens (reserved rows excluded).
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Table size including the reserved rows.
    pub fn size(&self) -> usize {
        self.tokens.len() + Self::RESERVED
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        (id as usize)
            .checked_sub(Self::RESERVED)
            .and_then(|i| self.tokens.get(i))
            .map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens
            .iter()
            .map(|s| s.as_str())
            .zip(self.counts.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_hold() {
        let mut v = Vocabulary::new();
        let id = v.push("alpha", 9);
        assert_eq!(id, 2);
        assert_eq!(v.lookup("alpha"), Some(2));
        assert_eq!(v.id_or_unk("missing"), Vocabulary::UNK);
        assert_eq!(v.size(), 3);
        assert_eq!(v.token(2), Some("alpha"));
        assert_eq!(v.token(0), None);
    }
}
