//! Gestalt pattern-matching similarity over characters: repeatedly take the
//! longest matching block, then recurse on the unmatched flanks. The ratio is
//! 2M/T where M is the total matched length and T the combined input length.

use std::collections::HashMap;

/// Similarity of `a` and `b` in [0, 1]. Two empty strings are identical (1.0).
///
/// Tie-breaking matches the classic sequence-matcher: among equally long
/// blocks the one starting earliest in `a`, then earliest in `b`, wins. The
/// measure is order-sensitive — swapping the arguments can change the result.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let matched = matched_char_total(&a, &b);
    2.0 * matched as f64 / total as f64
}

/// Total length of the recursively chosen longest matching blocks.
fn matched_char_total(a: &[char], b: &[char]) -> usize {
    // Positions of each character in b, ascending; scanned per window.
    let mut b2j: HashMap<char, Vec<usize>> = HashMap::new();
    for (j, &c) in b.iter().enumerate() {
        b2j.entry(c).or_default().push(j);
    }
    let mut scratch = RowScratch::new(b.len());
    let mut total = 0usize;
    let mut regions = vec![(0usize, a.len(), 0usize, b.len())];
    while let Some((alo, ahi, blo, bhi)) = regions.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, size) = longest_match(a, &b2j, &mut scratch, alo, ahi, blo, bhi);
        if size > 0 {
            total += size;
            regions.push((alo, i, blo, j));
            regions.push((i + size, ahi, j + size, bhi));
        }
    }
    total
}

/// Reusable DP rows. `prev[j]` is the match length ending at `b[j]` on the
/// previous row; entries are zeroed sparsely (via the touched lists) so the
/// arrays stay all-zero between calls without O(len) clears.
struct RowScratch {
    prev: Vec<usize>,
    cur: Vec<usize>,
    prev_touched: Vec<usize>,
    cur_touched: Vec<usize>,
}

impl RowScratch {
    fn new(b_len: usize) -> Self {
        RowScratch {
            prev: vec![0; b_len],
            cur: vec![0; b_len],
            prev_touched: Vec::new(),
            cur_touched: Vec::new(),
        }
    }
}

/// Longest block with `a[i..i+size] == b[j..j+size]` inside the given window,
/// preferring smallest `i`, then smallest `j`. Dynamic program over rows of
/// `a`, visiting only the positions where characters actually match.
fn longest_match(
    a: &[char],
    b2j: &HashMap<char, Vec<usize>>,
    scratch: &mut RowScratch,
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
) -> (usize, usize, usize) {
    let (mut besti, mut bestj, mut bestsize) = (alo, blo, 0usize);
    for i in alo..ahi {
        scratch.cur_touched.clear();
        if let Some(positions) = b2j.get(&a[i]) {
            for &j in positions {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                let k = if j > 0 { scratch.prev[j - 1] + 1 } else { 1 };
                scratch.cur[j] = k;
                scratch.cur_touched.push(j);
                if k > bestsize {
                    besti = i + 1 - k;
                    bestj = j + 1 - k;
                    bestsize = k;
                }
            }
        }
        for &j in &scratch.prev_touched {
            scratch.prev[j] = 0;
        }
        std::mem::swap(&mut scratch.prev, &mut scratch.cur);
        std::mem::swap(&mut scratch.prev_touched, &mut scratch.cur_touched);
    }
    for &j in &scratch.prev_touched {
        scratch.prev[j] = 0;
    }
    scratch.prev_touched.clear();
    (besti, bestj, bestsize)
}
