use crate::model::TokenId;

/// One token with byte offsets `[start, end)` into the encoded text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str) -> Vec<Token>;

    /// First `max_tokens` tokens of `text`.
    fn encode_prefix(&self, text: &str, max_tokens: usize) -> Vec<Token> {
        let mut t = self.encode(text);
        t.truncate(max_tokens);
        t
    }
}

/// One token per byte; ids are byte values.
#[derive(Clone, Copy, Debug, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> usize {
        256
    }

    fn encode(&self, text: &str) -> Vec<Token> {
        self.encode_prefix(text, usize::MAX)
    }

    fn encode_prefix(&self, text: &str, max_tokens: usize) -> Vec<Token> {
        text.bytes()
            .take(max_tokens)
            .enumerate()
            .map(|(i, b)| Token {
                id: b as TokenId,
                start: i,
                end: i + 1,
            })
            .collect()
    }
}

/// Whitespace-separated words hashed (FNV-1a) into a fixed vocabulary.
#[derive(Clone, Copy, Debug)]
pub struct WhitespaceTokenizer {
    vocab_size: usize,
}

impl WhitespaceTokenizer {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size >= 2, "vocabulary must hold at least two tokens");
        Self { vocab_size }
    }

    fn id_of(&self, word: &str) -> TokenId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.vocab_size as u64) as TokenId
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn encode(&self, text: &str) -> Vec<Token> {
        self.encode_prefix(text, usize::MAX)
    }

    fn encode_prefix(&self, text: &str, max_tokens: usize) -> Vec<Token> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
            if out.len() == max_tokens {
                break;
            }
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push(Token {
                        id: self.id_of(&text[s..i]),
                        start: s,
                        end: i,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        out
    }
}
