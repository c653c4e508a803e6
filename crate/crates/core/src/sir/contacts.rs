//! Contact sampling by partial Fisher–Yates.
//!
//! For a candidate list `c` of length `n` and `m <= n` contacts, position
//! `i = 0..m` is swapped with `i + uniform_int(0, n - 1 - i)`; the chosen
//! contacts are `c[0..m]` afterwards. One PRNG step per position.

use crate::runtime::Prng;

/// Partial Fisher–Yates over `items`: afterwards `items[..m]` holds the
/// sample. Consumes exactly `min(m, items.len())` PRNG steps.
pub fn partial_shuffle<T>(items: &mut [T], m: usize, prng: &mut Prng) {
    let n = items.len();
    for i in 0..m.min(n) {
        let j = i + prng.below((n - i) as u64) as usize;
        items.swap(i, j);
    }
}

/// Above this many contacts the candidate list is materialized rather than
/// tracked through a swap overlay.
const OVERLAY_LIMIT: usize = 16;

/// Reusable buffers for [`sample_contacts`].
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    candidates: Vec<u32>,
    overlay: Vec<(usize, u32)>,
}

/// Samples up to `k` contacts from `bucket` with the entry at `self_pos`
/// excluded, appending them to `out` in draw order.
///
/// Equivalent to building the candidate list and calling
/// [`partial_shuffle`], but small samples from large buckets only touch
/// the positions that are actually swapped.
pub(crate) fn sample_contacts(
    bucket: &[u32],
    self_pos: usize,
    k: u64,
    prng: &mut Prng,
    scratch: &mut Scratch,
    out: &mut Vec<u32>,
) {
    debug_assert!(self_pos < bucket.len());
    let n = bucket.len() - 1;
    let m = k.min(n as u64) as usize;
    if m == 0 {
        return;
    }

    if m > OVERLAY_LIMIT {
        let c = &mut scratch.candidates;
        c.clear();
        c.extend_from_slice(&bucket[..self_pos]);
        c.extend_from_slice(&bucket[self_pos + 1..]);
        partial_shuffle(c, m, prng);
        out.extend_from_slice(&c[..m]);
        return;
    }

    let base = |j: usize| bucket[j + usize::from(j >= self_pos)];
    let overlay = &mut scratch.overlay;
    overlay.clear();
    let get = |overlay: &[(usize, u32)], j: usize| {
        overlay
            .iter()
            .find(|(p, _)| *p == j)
            .map_or_else(|| base(j), |&(_, v)| v)
    };
    for i in 0..m {
        let j = i + prng.below((n - i) as u64) as usize;
        let vi = get(overlay, i);
        let vj = get(overlay, j);
        match overlay.iter_mut().find(|(p, _)| *p == j) {
            Some(slot) => slot.1 = vi,
            None => overlay.push((j, vi)),
        }
        out.push(vj);
    }
}
