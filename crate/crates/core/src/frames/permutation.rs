use std::collections::HashSet;

use crate::error::{Error, Result};

/// Row visiting order (1-based) in which every unordered pair of rows is
/// adjacent at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSequence(Vec<usize>);

impl PermutationSequence {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of input rows the sequence was built for.
    pub fn n_rows(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

/// Greedy pair-adjacency walk over `n_rows` stacked rows.
///
/// Starting from row 1, repeatedly step to the smallest row `j` after the
/// current row `i` (wrapping past `n_rows` back to 1) whose pair `{i, j}` has
/// not been used yet; stop when the scan comes back around to `i`.
///
/// The walk closes over every pair only when each row has even degree in the
/// complete graph, so `n_rows` must be odd.
pub fn build_permutation(n_rows: usize) -> Result<PermutationSequence> {
    if n_rows < 3 || n_rows % 2 == 0 {
        return Err(Error::Argument(format!(
            "{n_rows} rows: the pair-adjacency walk needs an odd row count >= 3 \
             so that every pair of rows can be made adjacent"
        )));
    }
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut seq = vec![1];
    let mut i = 1;
    let mut j = i + 1;
    while i != j {
        if j > n_rows {
            j = 1;
        } else if !used.contains(&(i.min(j), i.max(j))) {
            used.insert((i.min(j), i.max(j)));
            seq.push(j);
            i = j;
            j = i + 1;
        } else {
            j += 1;
        }
    }
    Ok(PermutationSequence(seq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covers_all_pairs(seq: &[usize], n: usize) -> bool {
        let adjacent: HashSet<(usize, usize)> = seq
            .windows(2)
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
            .collect();
        (1..=n).all(|a| (a + 1..=n).all(|b| adjacent.contains(&(a, b))))
    }

    #[test]
    fn nine_rows_matches_published_sequence() {
        let expected = [
            1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 3, 5, 7, 9, 2, 4, 6, 8, 1, 4, 7, 1, 5, 8, 2, 5, 9, 3, 6, 9,
            4, 8, 3, 7, 2, 6, 1,
        ];
        assert_eq!(build_permutation(9).unwrap().as_slice(), &expected);
    }

    #[test]
    fn three_rows() {
        assert_eq!(build_permutation(3).unwrap().as_slice(), &[1, 2, 3, 1]);
    }

    #[test]
    fn odd_sizes_cover_every_pair() {
        for n in (3..=13).step_by(2) {
            let p = build_permutation(n).unwrap();
            assert_eq!(p.len(), n * (n - 1) / 2 + 1, "n = {n}");
            assert_eq!(p.as_slice()[0], 1);
            assert_eq!(p.n_rows(), n);
            assert!(covers_all_pairs(p.as_slice(), n), "n = {n}");
        }
    }

    #[test]
    fn rejects_even_and_small() {
        for n in [0, 1, 2, 4, 8, 10] {
            let err = build_permutation(n).unwrap_err();
            assert!(matches!(err, Error::Argument(ref m) if m.contains("pair")));
        }
    }
}
