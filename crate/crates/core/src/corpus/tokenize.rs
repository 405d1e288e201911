pub const DEFAULT_VOCAB_SIZE: u32 = 32_768;

/// Maps text to token ids. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;

    /// Exclusive upper bound on emitted ids.
    fn vocab_size(&self) -> u32;
}

/// Splits text into maximal alphanumeric runs and single punctuation
/// characters; whitespace separates segments and is discarded.
pub fn segments(text: &str) -> impl Iterator<Item = &str> {
    let mut rest = text;
    std::iter::from_fn(move || {
        rest = rest.trim_start();
        let mut chars = rest.char_indices();
        let (_, first) = chars.next()?;
        let end = if first.is_alphanumeric() {
            chars
                .find(|(_, c)| !c.is_alphanumeric())
                .map_or(rest.len(), |(i, _)| i)
        } else {
            first.len_utf8()
        };
        let (segment, tail) = rest.split_at(end);
        rest = tail;
        Some(segment)
    })
}

/// Whitespace/punctuation splitter whose segments are lowercased and hashed
/// (FNV-1a) into a fixed id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingTokenizer {
    slots: u32,
}

impl HashingTokenizer {
    pub fn new(slots: u32) -> Self {
        assert!(slots > 0, "tokenizer needs at least one slot");
        Self { slots }
    }

    fn hash(&self, segment: &str) -> u32 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for c in segment.chars().flat_map(char::to_lowercase) {
            let mut buf = [0u8; 4];
            for &b in c.encode_utf8(&mut buf).as_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % self.slots as u64) as u32
    }
}

impl Default for HashingTokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_VOCAB_SIZE)
    }
}

impl Tokenizer for HashingTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        segments(text).map(|s| self.hash(s)).collect()
    }

    fn vocab_size(&self) -> u32 {
        self.slots
    }
}
