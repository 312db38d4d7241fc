//! The six trust/distrust ranking criteria.
//!
//! For a user `u` with observed items `I+_u`, a sampled negative set
//! `S-_u`, and optionally a friend `a` (observed `I+_a`) and a foe `b`
//! (observed `I+_b`), a partial relation `i > j` is generated by exactly
//! these case sets:
//!
//! 1. `i ∈ I+_u, j ∈ S-_u, j ∉ I+_b` — own items above sampled negatives
//! 2. `i ∈ I+_u, j ∈ I+_a \ I+_u`   — own items above friend-only items
//! 3. `i ∈ I+_u ∩ I+_a, j ∈ I+_a \ I+_u` — shared items above friend-only
//! 4. `i ∈ I+_a, j ∈ S-_u, j ∉ I+_b` — friend items above sampled negatives
//! 5. `i ∈ I+_a, j ∈ I+_b` — friend items above foe items
//! 6. `i ∈ S-_u, j ∈ I+_b` — sampled negatives above foe items
//!
//! Without a friend, cases 2-5 are empty; without a foe, cases 5 and 6 are
//! empty and the `j ∉ I+_b` guard is vacuous, which degrades case 1 to the
//! plain observed-over-unobserved criterion.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sets;

/// Which of the six criteria generated a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RankCase {
    OwnOverNegative = 1,
    OwnOverFriendOnly = 2,
    SharedOverFriendOnly = 3,
    FriendOverNegative = 4,
    FriendOverFoe = 5,
    NegativeOverFoe = 6,
}

/// All six cases in order.
pub const ALL_CASES: [RankCase; 6] = [
    RankCase::OwnOverNegative,
    RankCase::OwnOverFriendOnly,
    RankCase::SharedOverFriendOnly,
    RankCase::FriendOverNegative,
    RankCase::FriendOverFoe,
    RankCase::NegativeOverFoe,
];

impl RankCase {
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(ix: usize) -> RankCase {
        ALL_CASES[ix]
    }
}

/// Per-case sampling weights. Training draws a case proportionally to its
/// weight among the nonempty cases.
pub type CaseWeights = [f64; 6];

/// Equal weight on all six criteria.
pub const UNIFORM_WEIGHTS: CaseWeights = [1.0; 6];

/// Weight only on case 1; the degenerate observed-over-unobserved setting.
pub const CASE1_ONLY: CaseWeights = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// A training triple `(u, i, j)` asserting `i > j` for user `u`, tagged
/// with the case that generated it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PartialRelation {
    pub user: u32,
    /// Ranked-higher item.
    pub higher: u32,
    /// Ranked-lower item.
    pub lower: u32,
    pub case: RankCase,
    pub friend: Option<u32>,
    pub foe: Option<u32>,
}

/// Everything needed to instantiate the six case sets for one user and one
/// (friend, foe) draw.
#[derive(Debug, Clone)]
pub struct CriterionContext<'a> {
    user: u32,
    observed: &'a [u32],
    negatives: Vec<u32>,
    friend: Option<(u32, &'a [u32])>,
    foe: Option<(u32, &'a [u32])>,
    // derived, cached for enumeration and counting
    friend_only: Vec<u32>,  // I+_a \ I+_u
    shared: Vec<u32>,       // I+_u ∩ I+_a
    friend_foe_overlap: usize, // |I+_a ∩ I+_b|
}

impl<'a> CriterionContext<'a> {
    /// Build a context, checking the sampler contract: the negative set
    /// must be disjoint from the user's, friend's and foe's observed sets.
    pub fn new(
        user: u32,
        observed: &'a [u32],
        mut negatives: Vec<u32>,
        friend: Option<(u32, &'a [u32])>,
        foe: Option<(u32, &'a [u32])>,
    ) -> Result<Self> {
        sets::normalize(&mut negatives);
        if !sets::disjoint(&negatives, observed) {
            return Err(Error::Contract(
                "sampled negatives intersect the user's observed items".into(),
            ));
        }
        if let Some((a, fa)) = friend {
            if !sets::disjoint(&negatives, fa) {
                return Err(Error::Contract(format!(
                    "sampled negatives intersect friend {a}'s observed items"
                )));
            }
        }
        if let Some((b, fb)) = foe {
            if !sets::disjoint(&negatives, fb) {
                return Err(Error::Contract(format!(
                    "sampled negatives intersect foe {b}'s observed items"
                )));
            }
        }
        let friend_items = friend.map(|(_, f)| f).unwrap_or(&[]);
        let foe_items = foe.map(|(_, f)| f).unwrap_or(&[]);
        let friend_only = sets::difference(friend_items, observed);
        let shared = sets::intersect(observed, friend_items);
        let friend_foe_overlap = sets::intersect(friend_items, foe_items).len();
        Ok(CriterionContext {
            user,
            observed,
            negatives,
            friend,
            foe,
            friend_only,
            shared,
            friend_foe_overlap,
        })
    }

    pub fn user(&self) -> u32 {
        self.user
    }

    pub fn negatives(&self) -> &[u32] {
        &self.negatives
    }

    fn friend_items(&self) -> &[u32] {
        self.friend.map(|(_, f)| f).unwrap_or(&[])
    }

    fn foe_items(&self) -> &[u32] {
        self.foe.map(|(_, f)| f).unwrap_or(&[])
    }

    /// Exact size of each case set, without materializing it.
    pub fn case_sizes(&self) -> [usize; 6] {
        let obs = self.observed.len();
        let neg = self.negatives.len();
        let fri = self.friend_items().len();
        let foe = self.foe_items().len();
        [
            obs * neg,
            obs * self.friend_only.len(),
            self.shared.len() * self.friend_only.len(),
            fri * neg,
            // exclude the i == j diagonal that arises when an item is
            // observed by both the friend and the foe
            fri * foe - self.friend_foe_overlap,
            neg * foe,
        ]
    }

    /// Does `rel` satisfy its own case predicate under this context?
    pub fn validates(&self, rel: &PartialRelation) -> bool {
        if rel.user != self.user || rel.higher == rel.lower {
            return false;
        }
        let (i, j) = (rel.higher, rel.lower);
        let in_obs = |x| sets::contains(self.observed, x);
        let in_neg = |x| sets::contains(&self.negatives, x);
        let in_friend = |x| sets::contains(self.friend_items(), x);
        let in_foe = |x| sets::contains(self.foe_items(), x);
        match rel.case {
            RankCase::OwnOverNegative => in_obs(i) && in_neg(j) && !in_foe(j),
            RankCase::OwnOverFriendOnly => in_obs(i) && in_friend(j) && !in_obs(j),
            RankCase::SharedOverFriendOnly => {
                in_obs(i) && in_friend(i) && in_friend(j) && !in_obs(j)
            }
            RankCase::FriendOverNegative => in_friend(i) && in_neg(j) && !in_foe(j),
            RankCase::FriendOverFoe => in_friend(i) && in_foe(j),
            RankCase::NegativeOverFoe => in_neg(i) && in_foe(j),
        }
    }
}

/// Materialize all six case sets in deterministic order (case 1..6, each
/// in lexicographic (i, j) order over the sorted member sets).
pub fn enumerate_relations(ctx: &CriterionContext<'_>) -> Vec<PartialRelation> {
    let mut out = Vec::new();
    let friend = ctx.friend.map(|(a, _)| a);
    let foe = ctx.foe.map(|(b, _)| b);
    let mut push = |case: RankCase, i: u32, j: u32| {
        if i != j {
            out.push(PartialRelation {
                user: ctx.user,
                higher: i,
                lower: j,
                case,
                friend,
                foe,
            });
        }
    };
    let cross = |push: &mut dyn FnMut(RankCase, u32, u32), case, his: &[u32], los: &[u32]| {
        for &i in his {
            for &j in los {
                push(case, i, j);
            }
        }
    };
    // the `j ∉ I+_b` guard of cases 1 and 4 is implied by the context
    // contract (negatives never intersect the foe's observed set)
    cross(&mut push, RankCase::OwnOverNegative, ctx.observed, &ctx.negatives);
    cross(&mut push, RankCase::OwnOverFriendOnly, ctx.observed, &ctx.friend_only);
    cross(&mut push, RankCase::SharedOverFriendOnly, &ctx.shared, &ctx.friend_only);
    cross(&mut push, RankCase::FriendOverNegative, ctx.friend_items(), &ctx.negatives);
    cross(&mut push, RankCase::FriendOverFoe, ctx.friend_items(), ctx.foe_items());
    cross(&mut push, RankCase::NegativeOverFoe, &ctx.negatives, ctx.foe_items());
    out
}

/// Draw one relation: pick a case proportionally to `weights` restricted to
/// the nonempty cases, then a uniform member of that case set. Returns
/// `None` when every weighted case is empty (skip this user for the step).
pub fn sample_relation(
    ctx: &CriterionContext<'_>,
    weights: &CaseWeights,
    rng: &mut Rng,
) -> Option<PartialRelation> {
    let sizes = ctx.case_sizes();
    let mut candidates: [(usize, f64); 6] = [(0, 0.0); 6];
    let mut n_cand = 0;
    let mut total = 0.0;
    for c in 0..6 {
        if sizes[c] > 0 && weights[c] > 0.0 {
            candidates[n_cand] = (c, weights[c]);
            n_cand += 1;
            total += weights[c];
        }
    }
    let case_ix = match n_cand {
        0 => return None,
        // single candidate: no randomness consumed, so degenerate modes
        // stay bitwise-aligned with their explicit counterparts
        1 => candidates[0].0,
        _ => {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = candidates[n_cand - 1].0;
            for &(c, w) in &candidates[..n_cand] {
                if t < w {
                    chosen = c;
                    break;
                }
                t -= w;
            }
            chosen
        }
    };
    let case = RankCase::from_index(case_ix);
    let friend = ctx.friend.map(|(a, _)| a);
    let foe = ctx.foe.map(|(b, _)| b);
    let (i, j) = sample_pair(ctx, case, sizes[case_ix], rng);
    Some(PartialRelation {
        user: ctx.user,
        higher: i,
        lower: j,
        case,
        friend,
        foe,
    })
}

fn sample_pair(ctx: &CriterionContext<'_>, case: RankCase, size: usize, rng: &mut Rng) -> (u32, u32) {
    let pick = |xs: &[u32], rng: &mut Rng| xs[rng.random_range(0..xs.len())];
    match case {
        RankCase::OwnOverNegative => (pick(ctx.observed, rng), pick(&ctx.negatives, rng)),
        RankCase::OwnOverFriendOnly => (pick(ctx.observed, rng), pick(&ctx.friend_only, rng)),
        RankCase::SharedOverFriendOnly => (pick(&ctx.shared, rng), pick(&ctx.friend_only, rng)),
        RankCase::FriendOverNegative => (pick(ctx.friend_items(), rng), pick(&ctx.negatives, rng)),
        RankCase::FriendOverFoe => {
            // uniform over the product minus the diagonal; rejection is
            // cheap because the diagonal is tiny relative to the product
            debug_assert!(size > 0);
            loop {
                let i = pick(ctx.friend_items(), rng);
                let j = pick(ctx.foe_items(), rng);
                if i != j {
                    return (i, j);
                }
            }
        }
        RankCase::NegativeOverFoe => (pick(&ctx.negatives, rng), pick(ctx.foe_items(), rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use std::collections::HashSet;

    /// Independent oracle: test every ordered pair of distinct items from
    /// the universe against each case predicate, from the definitions.
    pub(crate) fn brute_force_relations(
        user: u32,
        universe: &[u32],
        observed: &[u32],
        negatives: &[u32],
        friend: Option<(u32, &[u32])>,
        foe: Option<(u32, &[u32])>,
    ) -> HashSet<(u32, u32, u8)> {
        let has = |xs: &[u32], x: u32| xs.contains(&x);
        let friend_items: &[u32] = friend.map(|(_, f)| f).unwrap_or(&[]);
        let foe_items: &[u32] = foe.map(|(_, f)| f).unwrap_or(&[]);
        let _ = user;
        let mut out = HashSet::new();
        for &i in universe {
            for &j in universe {
                if i == j {
                    continue;
                }
                if has(observed, i) && has(negatives, j) && !has(foe_items, j) {
                    out.insert((i, j, 1));
                }
                if has(observed, i) && has(friend_items, j) && !has(observed, j) {
                    out.insert((i, j, 2));
                }
                if has(observed, i)
                    && has(friend_items, i)
                    && has(friend_items, j)
                    && !has(observed, j)
                {
                    out.insert((i, j, 3));
                }
                if has(friend_items, i) && has(negatives, j) && !has(foe_items, j) {
                    out.insert((i, j, 4));
                }
                if has(friend_items, i) && has(foe_items, j) {
                    out.insert((i, j, 5));
                }
                if has(negatives, i) && has(foe_items, j) {
                    out.insert((i, j, 6));
                }
            }
        }
        out
    }

    fn as_set(rels: &[PartialRelation]) -> HashSet<(u32, u32, u8)> {
        rels.iter()
            .map(|r| (r.higher, r.lower, r.case as u8))
            .collect()
    }

    fn worked_ctx<'a>() -> CriterionContext<'a> {
        // I = {1..6}, I+_u = {1,2}, I+_a = {2,3}, I+_b = {4}, S-_u = {5,6}
        CriterionContext::new(
            0,
            &[1, 2],
            vec![5, 6],
            Some((10, &[2, 3])),
            Some((20, &[4])),
        )
        .unwrap()
    }

    #[test]
    fn worked_example_reproduces_all_six_sets() {
        let ctx = worked_ctx();
        let rels = enumerate_relations(&ctx);
        let by_case = |c: u8| -> HashSet<(u32, u32)> {
            rels.iter()
                .filter(|r| r.case as u8 == c)
                .map(|r| (r.higher, r.lower))
                .collect()
        };
        let set = |pairs: &[(u32, u32)]| pairs.iter().copied().collect::<HashSet<_>>();
        assert_eq!(by_case(1), set(&[(1, 5), (1, 6), (2, 5), (2, 6)]));
        assert_eq!(by_case(2), set(&[(1, 3), (2, 3)]));
        assert_eq!(by_case(3), set(&[(2, 3)]));
        assert_eq!(by_case(4), set(&[(2, 5), (2, 6), (3, 5), (3, 6)]));
        assert_eq!(by_case(5), set(&[(2, 4), (3, 4)]));
        assert_eq!(by_case(6), set(&[(5, 4), (6, 4)]));
    }

    #[test]
    fn worked_example_matches_brute_force() {
        let ctx = worked_ctx();
        let got = as_set(&enumerate_relations(&ctx));
        let want = brute_force_relations(
            0,
            &[1, 2, 3, 4, 5, 6],
            &[1, 2],
            &[5, 6],
            Some((10, &[2, 3])),
            Some((20, &[4])),
        );
        assert_eq!(got, want);
    }

    #[test]
    fn no_friend_no_foe_reduces_to_case1_product() {
        let ctx = CriterionContext::new(3, &[1, 2], vec![5, 6], None, None).unwrap();
        let rels = enumerate_relations(&ctx);
        assert!(rels.iter().all(|r| r.case == RankCase::OwnOverNegative));
        assert_eq!(rels.len(), 4);
        assert_eq!(ctx.case_sizes(), [4, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn identical_friend_set_empties_cases_2_and_3() {
        let ctx = CriterionContext::new(0, &[1, 2], vec![5], Some((9, &[1, 2])), None).unwrap();
        let sizes = ctx.case_sizes();
        assert_eq!(sizes[1], 0);
        assert_eq!(sizes[2], 0);
    }

    #[test]
    fn every_emitted_relation_revalidates() {
        let ctx = worked_ctx();
        for rel in enumerate_relations(&ctx) {
            assert!(ctx.validates(&rel), "{rel:?}");
        }
    }

    #[test]
    fn enumeration_order_is_deterministic() {
        let a = enumerate_relations(&worked_ctx());
        let b = enumerate_relations(&worked_ctx());
        assert_eq!(a, b);
    }

    #[test]
    fn context_rejects_negative_overlap() {
        // negatives intersect the friend's observed set
        assert!(CriterionContext::new(0, &[1], vec![3], Some((9, &[3])), None).is_err());
        // negatives intersect the user's observed set
        assert!(CriterionContext::new(0, &[1], vec![1], None, None).is_err());
        // negatives intersect the foe's observed set
        assert!(CriterionContext::new(0, &[1], vec![4], None, Some((9, &[4]))).is_err());
    }

    #[test]
    fn friend_foe_shared_item_never_yields_self_pair() {
        // item 7 observed by both friend and foe: (7, 7) must not appear
        let ctx =
            CriterionContext::new(0, &[1], vec![2], Some((9, &[7])), Some((8, &[7, 5]))).unwrap();
        let rels = enumerate_relations(&ctx);
        assert!(rels.iter().all(|r| r.higher != r.lower));
        assert_eq!(ctx.case_sizes()[4], 1); // (7,5) only
        let got = as_set(&rels);
        let want = brute_force_relations(
            0,
            &[1, 2, 5, 7],
            &[1],
            &[2],
            Some((9, &[7])),
            Some((8, &[7, 5])),
        );
        assert_eq!(got, want);
    }

    #[test]
    fn sampled_case_respects_zeroed_weights() {
        let ctx = worked_ctx();
        let mut rng = stream_rng(1, "test", 0);
        for _ in 0..200 {
            let rel = sample_relation(&ctx, &CASE1_ONLY, &mut rng).unwrap();
            assert_eq!(rel.case, RankCase::OwnOverNegative);
            assert!(ctx.validates(&rel));
        }
    }

    #[test]
    fn sampling_signals_skip_when_everything_is_empty() {
        let ctx = CriterionContext::new(0, &[], vec![], None, None).unwrap();
        let mut rng = stream_rng(2, "test", 0);
        assert!(sample_relation(&ctx, &UNIFORM_WEIGHTS, &mut rng).is_none());
    }

    #[test]
    fn only_nonempty_case_is_picked_without_consuming_randomness() {
        use rand::Rng as _;
        let ctx = CriterionContext::new(3, &[1, 2], vec![5, 6], None, None).unwrap();
        let mut r1 = stream_rng(5, "test", 0);
        let mut r2 = stream_rng(5, "test", 0);
        let _ = sample_relation(&ctx, &UNIFORM_WEIGHTS, &mut r1).unwrap();
        let _ = sample_relation(&ctx, &CASE1_ONLY, &mut r2).unwrap();
        assert_eq!(r1.random::<u64>(), r2.random::<u64>());
    }

    #[test]
    fn uniform_case_frequencies_on_worked_example() {
        // all six cases nonempty: each should be drawn ~1/6 of the time
        let ctx = worked_ctx();
        let mut rng = stream_rng(7, "test", 0);
        let n = 60_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let rel = sample_relation(&ctx, &UNIFORM_WEIGHTS, &mut rng).unwrap();
            counts[rel.case.index()] += 1;
        }
        for (c, &k) in counts.iter().enumerate() {
            let freq = k as f64 / n as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.02,
                "case {} frequency {freq}",
                c + 1
            );
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(256))]

        /// Random small instances agree with the brute-force oracle.
        #[test]
        fn enumeration_matches_brute_force(
            seed in 0u64..1_000_000,
            n_items in 1usize..=8,
            has_friend in proptest::bool::ANY,
            has_foe in proptest::bool::ANY,
        ) {
            let (ctx_parts, universe) = random_instance(seed, n_items, has_friend, has_foe);
            let (observed, negatives, friend_items, foe_items) = &ctx_parts;
            let friend = if has_friend { Some((100, friend_items.as_slice())) } else { None };
            let foe = if has_foe { Some((200, foe_items.as_slice())) } else { None };
            let ctx = CriterionContext::new(0, observed, negatives.clone(), friend, foe).unwrap();
            let got = as_set(&enumerate_relations(&ctx));
            let want = brute_force_relations(0, &universe, observed, negatives, friend, foe);
            proptest::prop_assert_eq!(got, want);
        }
    }

    /// Generate a random instance satisfying the context invariants:
    /// negatives disjoint from observed, friend and foe sets.
    pub(crate) fn random_instance(
        seed: u64,
        n_items: usize,
        has_friend: bool,
        has_foe: bool,
    ) -> ((Vec<u32>, Vec<u32>, Vec<u32>, Vec<u32>), Vec<u32>) {
        let mut rng = stream_rng(seed, "criteria-instance", 0);
        let universe: Vec<u32> = (0..n_items as u32).collect();
        let mut observed = Vec::new();
        let mut friend_items = Vec::new();
        let mut foe_items = Vec::new();
        let mut candidates = Vec::new();
        for &i in &universe {
            if rng.random::<f64>() < 0.4 {
                observed.push(i);
            }
            if has_friend && rng.random::<f64>() < 0.4 {
                friend_items.push(i);
            }
            if has_foe && rng.random::<f64>() < 0.3 {
                foe_items.push(i);
            }
        }
        for &i in &universe {
            let blocked = observed.contains(&i)
                || friend_items.contains(&i)
                || foe_items.contains(&i);
            if !blocked && rng.random::<f64>() < 0.6 {
                candidates.push(i);
            }
        }
        ((observed, candidates, friend_items, foe_items), universe)
    }
}
