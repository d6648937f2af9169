use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::DatasetError;
use crate::model::TokenId;

/// Sorted, de-duplicated token table. Token ids are positions in the table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(|t| t.as_ref().to_string()).collect();
        let tokens: Vec<String> = set.into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), TokenId(i as u32))).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>, DatasetError> {
        words
            .iter()
            .map(|w| self.id(w.as_ref()).ok_or_else(|| DatasetError::UnknownToken(w.as_ref().to_string())))
            .collect()
    }

    /// Decode, rendering out-of-range ids as `<?>`.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&t| self.token(t).unwrap_or("<?>").to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_sorted_order() {
        let v = Vocabulary::new(["what", "color", "?", "color"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.tokens(), &["?", "color", "what"]);
        assert_eq!(v.id("color"), Some(TokenId(1)));
        assert_eq!(v.encode(&["what", "?"]).unwrap(), [TokenId(2), TokenId(0)]);
        assert!(v.encode(&["nope"]).is_err());
    }
}
