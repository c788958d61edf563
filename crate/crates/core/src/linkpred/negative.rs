use rand::Rng;

use crate::graph::{EntityId, Triple};

/// Corrupts `positive` `count` times. Each corruption flips a fair coin for
/// the side and replaces that entity with one drawn uniformly from the
/// entities that differ from both the original and the opposite side, so no
/// negative equals the positive or forms a self-loop.
///
/// With fewer than three entities no such replacement exists and the result
/// is empty.
pub fn negative_sample(n_entities: usize, positive: &Triple, rng: &mut impl Rng, count: usize) -> Vec<Triple> {
    let mut out = Vec::with_capacity(count);
    if n_entities < 3 {
        return out;
    }
    for _ in 0..count {
        let corrupt_head = rng.gen_bool(0.5);
        let (original, other) = if corrupt_head {
            (positive.head.index(), positive.tail.index())
        } else {
            (positive.tail.index(), positive.head.index())
        };
        let (lo, hi) = (original.min(other), original.max(other));
        let mut e = rng.gen_range(0..n_entities - 2);
        if e >= lo {
            e += 1;
        }
        if e >= hi {
            e += 1;
        }
        let mut neg = *positive;
        if corrupt_head {
            neg.head = EntityId::from(e);
        } else {
            neg.tail = EntityId::from(e);
        }
        out.push(neg);
    }
    out
}
