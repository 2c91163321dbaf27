//! Dice string similarity for operator-name matching.
//!
//! `D = 2·K_m / (|S1| + |S2|)` where S1, S2 are the operator names uppercased
//! with non-alphanumerics removed, and K_m counts matched characters as the
//! length of the longest common subsequence. Vendor prefixes and separator
//! styles ("TFL_L2_NORMALIZATION" vs "LpNormalization") thus cost little,
//! while genuinely different names stay far apart.

/// Uppercases and strips every non-alphanumeric character.
pub fn normalize_symbol(s: &str) -> Vec<char> {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(|c| c.to_uppercase())
        .collect()
}

/// Longest-common-subsequence length, classic O(|a|·|b|) dynamic program.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            row[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Dice similarity over normalized names, in [0, 1]. Returns 0 when both
/// normalized strings are empty.
pub fn dice_similarity(s1: &str, s2: &str) -> f64 {
    let a = normalize_symbol(s1);
    let b = normalize_symbol(s2);
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * lcs_len(&a, &b) as f64 / (a.len() + b.len()) as f64
}
