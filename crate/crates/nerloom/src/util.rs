//! Small internal helpers shared across modules: stable hashing for seed
//! derivation and char/byte offset arithmetic for UTF-8 texts.

/// FNV-1a 64-bit over a byte slice. Used instead of `DefaultHasher` because
/// seeds derived from it must be stable across platforms and Rust releases.
pub(crate) fn fnv1a64(data: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in data {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Derives a child RNG seed from a base seed and a string tag. Every seeded
/// stage uses this so that per-dataset / per-sample streams are independent
/// but reproducible.
pub(crate) fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = fnv1a64(tag.as_bytes());
    h ^= base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    // splitmix-style finalizer so nearby bases do not produce nearby seeds
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Number of Unicode scalar values in `s`.
pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Slice of `s` between char offsets `start..end`, or None when out of range.
pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> Option<String> {
    if start > end {
        return None;
    }
    let mut it = s.chars();
    let mut out = String::new();
    for _ in 0..start {
        it.next()?;
    }
    for _ in start..end {
        out.push(it.next()?);
    }
    Some(out)
}

/// Byte offset -> char offset lookup table for one text. Matching machinery
/// works on bytes; the data model speaks char offsets, so every text that is
/// searched gets one of these.
pub(crate) struct CharIndex {
    // byte offset of the i-th char; one extra entry for text.len()
    starts: Vec<usize>,
}

impl CharIndex {
    pub(crate) fn new(text: &str) -> Self {
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        CharIndex { starts }
    }

    /// Char offset for a byte offset that falls on a char boundary.
    pub(crate) fn char_at(&self, byte: usize) -> usize {
        match self.starts.binary_search(&byte) {
            Ok(i) => i,
            // non-boundary bytes cannot come out of a valid match range
            Err(i) => i - 1,
        }
    }
}
