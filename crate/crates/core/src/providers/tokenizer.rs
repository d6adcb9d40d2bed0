//! Byte-level tokenizer shared by the local n-gram providers. Token ids are
//! raw byte values, so any text round-trips exactly.

use crate::providers::ProviderError;
use crate::types::{TokenId, TokenSequence};

/// Number of distinct byte tokens.
pub const BYTE_VOCAB_SIZE: u32 = 256;

pub struct ByteTokenizer;

impl ByteTokenizer {
    /// One token per byte of `text`, which must not be blank. Whitespace
    /// inside the text is kept verbatim.
    pub fn tokenize(text: &str) -> Result<TokenSequence, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let ids = text.bytes().map(TokenId::from).collect();
        Ok(TokenSequence::with_text(ids, text))
    }

    /// Reassembles bytes into a string, replacing invalid UTF-8 runs with
    /// the replacement character. Exact inverse of [`Self::tokenize`] for
    /// sequences that came from real text.
    pub fn detokenize(tokens: &TokenSequence) -> Result<String, ProviderError> {
        let mut bytes = Vec::with_capacity(tokens.len());
        for &id in &tokens.token_ids {
            if id >= BYTE_VOCAB_SIZE {
                return Err(ProviderError::VocabMismatch { token: id, vocab_size: BYTE_VOCAB_SIZE });
            }
            bytes.push(id as u8);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_text_exactly() {
        let text = "  spaces kept, ünïcode too. ";
        let tokens = ByteTokenizer::tokenize(text).unwrap();
        assert_eq!(tokens.len(), text.len());
        assert_eq!(tokens.text.as_deref(), Some(text));
        assert_eq!(ByteTokenizer::detokenize(&tokens).unwrap(), text);
    }

    #[test]
    fn rejects_blank_input() {
        assert_eq!(ByteTokenizer::tokenize("").unwrap_err(), ProviderError::EmptyInput);
        assert_eq!(ByteTokenizer::tokenize("  \n\t").unwrap_err(), ProviderError::EmptyInput);
    }

    #[test]
    fn rejects_tokens_beyond_byte_range() {
        let seq = TokenSequence::new(vec![65, 256]);
        assert_eq!(
            ByteTokenizer::detokenize(&seq).unwrap_err(),
            ProviderError::VocabMismatch { token: 256, vocab_size: 256 }
        );
    }

    #[test]
    fn invalid_utf8_is_replaced_not_fatal() {
        let seq = TokenSequence::new(vec![0xFF, 0xFE]);
        let text = ByteTokenizer::detokenize(&seq).unwrap();
        assert_eq!(text.chars().filter(|&c| c == '\u{FFFD}').count(), 2);
    }
}
