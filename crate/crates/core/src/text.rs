//! String normalization and edit distance.

/// Lowercases and collapses every whitespace run to one space, trimming the
/// ends.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
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

/// Levenshtein distance if it is at most `max`, else `None`. Only a diagonal
/// band of width `2 * max + 1` is filled.
pub fn bounded_levenshtein(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > max {
        return None;
    }
    if n == 0 || m == 0 {
        return Some(n.max(m));
    }
    const INF: usize = usize::MAX / 2;
    let mut prev = vec![INF; m + 1];
    let mut cur = vec![INF; m + 1];
    for (j, slot) in prev.iter_mut().enumerate().take(max.min(m) + 1) {
        *slot = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(max).max(1);
        let hi = (i + max).min(m);
        cur.fill(INF);
        if i <= max {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= max).then_some(prev[m])
}

/// `1 - dist / max(len)`; two empty strings are identical.
pub fn similarity_from_distance(dist: usize, len_a: usize, len_b: usize) -> f64 {
    let longest = len_a.max(len_b);
    if longest == 0 {
        1.0
    } else {
        1.0 - dist as f64 / longest as f64
    }
}

/// Normalized Levenshtein similarity on the raw strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_from_distance(levenshtein_chars(&a, &b), a.len(), b.len())
}

/// Whether the similarity of `a` and `b` reaches `threshold`, computing the
/// distance only as far as needed to decide.
pub fn similar_at_least(a: &[char], b: &[char], threshold: f64) -> bool {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return true;
    }
    // any distance above this bound already gives similarity < threshold
    let bound = ((1.0 - threshold) * longest as f64).ceil() as usize + 1;
    match bounded_levenshtein(a, b, bound) {
        Some(d) => similarity_from_distance(d, a.len(), b.len()) >= threshold,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_text("  Create\ta  NEW\nproject "),
            "create a new project"
        );
        assert_eq!(normalize_text(""), "");
    }

    #[test]
    fn distance_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
        assert_eq!(levenshtein("héllo", "hello"), 1);
        assert!((levenshtein_similarity("abcd", "abce") - 0.75).abs() < 1e-12);
        assert_eq!(levenshtein_similarity("", ""), 1.0);
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    proptest! {
        #[test]
        fn bounded_agrees_with_full(a in "[abc]{0,14}", b in "[abc]{0,14}", max in 0usize..16) {
            let d = levenshtein(&a, &b);
            let got = bounded_levenshtein(&chars(&a), &chars(&b), max);
            prop_assert_eq!(got, (d <= max).then_some(d));
        }

        #[test]
        fn threshold_decision_agrees(a in "[ab ]{0,30}", b in "[ab ]{0,30}", t in 0.05f64..=1.0) {
            let expect = levenshtein_similarity(&a, &b) >= t;
            prop_assert_eq!(similar_at_least(&chars(&a), &chars(&b), t), expect);
        }

        #[test]
        fn normalize_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}
