//! Occupancy-count state tying.
//!
//! Each `(center, state)` owns one backoff tied state. Triphone states whose
//! aligned frame count reaches `min_count` get a tied state of their own,
//! most frequent first, until the total reaches `max_states`.

use std::collections::BTreeMap;

use super::{AlignResult, TiedStateMap, Triphone};
use crate::corpus::PhoneId;

/// Aligned frame counts per `(triphone, hmm state)`.
pub type TriphoneCounts = BTreeMap<(Triphone, u8), u64>;

/// Counts frames per triphone state from alignments of the given phone sequences.
pub fn count_triphone_states<'a>(
    aligned: impl IntoIterator<Item = (&'a [PhoneId], &'a AlignResult)>,
    silence: PhoneId,
) -> TriphoneCounts {
    let mut counts = TriphoneCounts::new();
    for (phones, res) in aligned {
        for (&pos, &state) in res.positions.iter().zip(&res.states) {
            let tri = Triphone::in_context(phones, pos as usize, silence);
            *counts.entry((tri, state)).or_default() += 1;
        }
    }
    counts
}

/// `min_count = u32::MAX` means infinity (pure monophone tying).
pub fn tie_states(counts: &TriphoneCounts, num_phones: usize, min_count: u32, max_states: u32) -> TiedStateMap {
    let mut map = TiedStateMap::monophone(num_phones);
    if min_count == u32::MAX {
        return map;
    }
    let mut candidates: Vec<(&(Triphone, u8), &u64)> = counts
        .iter()
        .filter(|(_, &c)| c >= min_count as u64)
        .collect();
    // Stable sort keeps key order among equal counts.
    candidates.sort_by(|a, b| b.1.cmp(a.1));
    for (&(tri, state), _) in candidates {
        if map.num_states() as u64 >= max_states as u64 {
            break;
        }
        map.insert(tri, state);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(entries: &[((usize, usize, usize), u8, u64)]) -> TriphoneCounts {
        entries
            .iter()
            .map(|&((l, c, r), s, n)| ((Triphone::new(l, c, r), s), n))
            .collect()
    }

    #[test]
    fn infinite_threshold_is_monophone() {
        let c = counts(&[((0, 1, 2), 0, 100), ((2, 1, 0), 1, 50)]);
        let map = tie_states(&c, 3, u32::MAX, u32::MAX);
        assert_eq!(map.num_states(), 9);
    }

    #[test]
    fn zero_threshold_gives_every_observed_pair_an_id() {
        let c = counts(&[((0, 1, 2), 0, 3), ((2, 1, 0), 1, 1), ((1, 2, 1), 2, 7)]);
        let map = tie_states(&c, 3, 0, u32::MAX);
        assert_eq!(map.num_states(), 9 + 3);
        let ids: std::collections::BTreeSet<_> = c.keys().map(|&(t, s)| map.lookup(t, s)).collect();
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|&id| !map.is_backoff(id)));
        // Most frequent first.
        assert_eq!(map.lookup(Triphone::new(1, 2, 1), 2), 9);
    }

    #[test]
    fn same_center_distinct_contexts() {
        // a-b+c and d-b+c with a=1, b=2, c=3, d=4.
        let c = counts(&[((1, 2, 3), 0, 10), ((4, 2, 3), 0, 12)]);
        let map = tie_states(&c, 5, 5, u32::MAX);
        let x = map.lookup(Triphone::new(1, 2, 3), 0);
        let y = map.lookup(Triphone::new(4, 2, 3), 0);
        assert_ne!(x, y);
        assert_eq!(map.center_phone(x), 2);
        assert_eq!(map.center_phone(y), 2);
        // Unseen context backs off to (center, state).
        assert_eq!(map.lookup(Triphone::new(0, 2, 0), 0), map.backoff(2, 0));
    }

    #[test]
    fn threshold_and_cap() {
        let c = counts(&[((1, 2, 3), 0, 10), ((4, 2, 3), 0, 12), ((4, 2, 3), 1, 2)]);
        assert_eq!(tie_states(&c, 5, 5, u32::MAX).num_states(), 15 + 2);
        let capped = tie_states(&c, 5, 0, 16);
        assert_eq!(capped.num_states(), 16);
        assert_eq!(capped.lookup(Triphone::new(4, 2, 3), 0), 15);
        assert_eq!(capped.lookup(Triphone::new(1, 2, 3), 0), capped.backoff(2, 0));
    }
}
