//! Deterministic text embedders.
//!
//! Both embedders are pure functions of their input: no model weights, no
//! network, no RNG. They trade semantic quality for reproducibility — the
//! same corpus always produces bit-identical vectors, which is what makes
//! index round-trips and replayed runs checkable. The two implementations
//! differ in signal (character shape vs identifier vocabulary) and are
//! interchangeable behind [`Embedder`].

/// A text-to-vector function with a stable identity. Indexes record the
/// embedder id and dimension count so a mismatched embedder is rejected at
/// load time instead of producing silently meaningless scores.
pub trait Embedder {
    /// Stable id persisted in index manifests, e.g. `"ngram-v1/256"`.
    fn id(&self) -> &'static str;
    fn dims(&self) -> usize;
    /// Unit-length vector, or all zeros for text with no features.
    fn embed(&self, text: &str) -> Vec<f32>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1_0000_0001_b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Signed feature hashing: hash each feature, use one hash bit for sign and
/// the rest to pick a bucket. The sign trick keeps colliding features from
/// always reinforcing each other.
fn bucket_accumulate(dims: usize, features: impl Iterator<Item = u64>) -> Vec<f32> {
    let mut v = vec![0.0f32; dims];
    for h in features {
        let idx = ((h >> 1) % dims as u64) as usize;
        let sign = if h & 1 == 1 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    normalize(v)
}

/// Character 3-gram embedder over the lowercased bytes. Sensitive to
/// spelling and shape, language-agnostic, works on prose and code alike.
#[derive(Debug, Clone, Copy, Default)]
pub struct NgramEmbedder;

impl Embedder for NgramEmbedder {
    fn id(&self) -> &'static str {
        "ngram-v1/256"
    }

    fn dims(&self) -> usize {
        256
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let lowered = text.to_lowercase();
        let bytes = lowered.as_bytes();
        let grams = bytes.windows(3).map(fnv1a);
        bucket_accumulate(self.dims(), grams)
    }
}

/// Identifier bag-of-words embedder: splits on non-word characters, lowers
/// case, hashes whole tokens. Sensitive to vocabulary, blind to word order.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenEmbedder;

impl Embedder for TokenEmbedder {
    fn id(&self) -> &'static str {
        "token-v1/128"
    }

    fn dims(&self) -> usize {
        128
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let lowered = text.to_lowercase();
        let tokens = identifier_tokens(&lowered).into_iter().map(|t| fnv1a(t.as_bytes()));
        bucket_accumulate(self.dims(), tokens)
    }
}

/// Maximal runs of `[A-Za-z0-9_]` starting with a letter or underscore.
pub fn identifier_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        let word_char = c.is_ascii_alphanumeric() || c == '_';
        let can_start = c.is_ascii_alphabetic() || c == '_';
        if word_char && (!current.is_empty() || can_start) {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Cosine similarity; zero whenever either vector has zero norm. Vectors of
/// different lengths dot over the common prefix — backends enforce matching
/// dims on upsert, so this only matters for deliberate zero-dim probes.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn embedders_report_their_shape() {
        assert_eq!(NgramEmbedder.dims(), 256);
        assert_eq!(NgramEmbedder.embed("hello world").len(), 256);
        assert_eq!(TokenEmbedder.dims(), 128);
        assert_eq!(TokenEmbedder.embed("hello world").len(), 128);
        assert_ne!(NgramEmbedder.id(), TokenEmbedder.id());
    }

    #[test]
    fn empty_and_featureless_text_embed_to_zero() {
        assert!(NgramEmbedder.embed("").iter().all(|&x| x == 0.0));
        assert!(NgramEmbedder.embed("ab").iter().all(|&x| x == 0.0));
        assert!(TokenEmbedder.embed("=== ++ :: 123").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identifier_tokens_split_on_punctuation_and_skip_leading_digits() {
        assert_eq!(
            identifier_tokens("fn render_block(opts: BlockOptions) -> 3d_x"),
            vec!["fn", "render_block", "opts", "BlockOptions", "d_x"]
        );
        assert_eq!(identifier_tokens("1234 5"), Vec::<String>::new());
        assert_eq!(identifier_tokens("_private x1"), vec!["_private", "x1"]);
    }

    #[test]
    fn related_text_scores_above_unrelated() {
        for e in [&NgramEmbedder as &dyn Embedder, &TokenEmbedder as &dyn Embedder] {
            let query = e.embed("parse calendar event schedule");
            let related = e.embed("fn parse_schedule(event: CalendarEvent)");
            let unrelated = e.embed("zlib compression window bitstream huffman");
            assert!(
                cosine(&query, &related) > cosine(&query, &unrelated),
                "{} failed to rank related text higher",
                e.id()
            );
        }
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn embedding_is_deterministic(text in ".{0,200}") {
            prop_assert_eq!(NgramEmbedder.embed(&text), NgramEmbedder.embed(&text));
            prop_assert_eq!(TokenEmbedder.embed(&text), TokenEmbedder.embed(&text));
        }

        #[test]
        fn embedding_norm_is_unit_or_zero(text in ".{0,200}") {
            for v in [NgramEmbedder.embed(&text), TokenEmbedder.embed(&text)] {
                let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-4, "norm was {norm}");
            }
        }

        #[test]
        fn cosine_is_bounded(text_a in ".{1,80}", text_b in ".{1,80}") {
            let a = NgramEmbedder.embed(&text_a);
            let b = NgramEmbedder.embed(&text_b);
            let c = cosine(&a, &b);
            prop_assert!((-1.0001..=1.0001).contains(&c));
        }
    }
}
