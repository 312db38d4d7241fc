//! Small operations on sorted, deduplicated id slices.
//!
//! Observed-item sets and neighbor lists are stored as sorted `Vec<u32>`;
//! these helpers keep the set algebra in one place.

/// Binary-search membership test. `xs` must be sorted.
pub fn contains(xs: &[u32], x: u32) -> bool {
    xs.binary_search(&x).is_ok()
}

/// `a ∩ b` for sorted slices.
pub fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// `a \ b` for sorted slices.
pub fn difference(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut j = 0;
    for &x in a {
        while j < b.len() && b[j] < x {
            j += 1;
        }
        if j >= b.len() || b[j] != x {
            out.push(x);
        }
    }
    out
}

/// True when `a ∩ b = ∅` for sorted slices.
pub fn disjoint(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return false,
        }
    }
    true
}

/// Sort and deduplicate in place.
pub fn normalize(xs: &mut Vec<u32>) {
    xs.sort_unstable();
    xs.dedup();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_algebra() {
        let a = vec![1, 2, 3, 5];
        let b = vec![2, 3, 4];
        assert_eq!(intersect(&a, &b), vec![2, 3]);
        assert_eq!(difference(&a, &b), vec![1, 5]);
        assert!(!disjoint(&a, &b));
        assert!(disjoint(&[1, 3], &[2, 4]));
        assert!(contains(&a, 5));
        assert!(!contains(&a, 4));
    }

    #[test]
    fn empty_edges() {
        assert_eq!(intersect(&[], &[1]), Vec::<u32>::new());
        assert_eq!(difference(&[1], &[]), vec![1]);
        assert!(disjoint(&[], &[]));
    }
}
