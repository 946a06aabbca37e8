//! Small text helpers shared across the pipeline: whitespace normalization,
//! content-word extraction, and edit distance.

/// Lowercases and collapses all whitespace runs to single spaces.
/// Used wherever two subquery texts are compared for "sameness".
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "do", "does", "for", "from", "how",
    "i", "in", "is", "it", "its", "me", "my", "of", "on", "or", "please", "that", "the", "their",
    "them", "they", "this", "to", "was", "we", "what", "when", "where", "which", "who", "why",
    "with", "you", "your",
];

/// Lowercased alphanumeric tokens with common function words removed.
pub fn content_words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Jaccard similarity of the content-word sets of two strings, in [0, 1].
/// Two strings without any content words score 0.
pub fn content_word_jaccard(a: &str, b: &str) -> f64 {
    let sa: std::collections::BTreeSet<_> = content_words(a).into_iter().collect();
    let sb: std::collections::BTreeSet<_> = content_words(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Relative edit distance: levenshtein / max(len), 0 for two empty strings.
pub fn relative_edit_distance(a: &str, b: &str) -> f64 {
    let denom = a.chars().count().max(b.chars().count());
    if denom == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / denom as f64
}
