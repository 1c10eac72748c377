//! Sentence-level ROUGE-L (LCS F1, beta = 1) over word tokens.

/// Lowercases, splits on Unicode whitespace and trims leading/trailing
/// non-alphanumeric characters from each token. Tokens left empty are dropped.
/// No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 with precision `LCS/|b|` and recall `LCS/|a|`.
/// Zero when either side is empty or nothing is shared.
pub fn rouge_l<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let lcs = lcs_len(a, b);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / b.len() as f64;
    let recall = lcs as f64 / a.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn rouge_l_text(a: &str, b: &str) -> f64 {
    rouge_l(&tokenize(a), &tokenize(b))
}
