//! The greedy-memory property over randomized streams.

use clrep::memory::ExemplarMemory;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

/// `(capacity, order_a, order_b, seed)`: one labelled stream in two random orders.
pub fn streams() -> impl Strategy<Value = (usize, Vec<u32>, Vec<u32>, u64)> {
    (1usize..48, proptest::collection::vec(0usize..40, 1..7), any::<u64>()).prop_flat_map(|(capacity, counts, seed)| {
        let labels: Vec<u32> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n)).collect();
        (Just(capacity), Just(labels.clone()).prop_shuffle(), Just(labels).prop_shuffle(), Just(seed))
    })
}

fn sorted_counts(m: &ExemplarMemory) -> Vec<usize> {
    let mut v: Vec<usize> = m.class_counts().into_values().collect();
    v.sort_unstable();
    v
}

/// Capacity never exceeded and a full memory never unbalanced, after every
/// offer; the final count profile does not depend on arrival order.
pub fn check(capacity: usize, order_a: &[u32], order_b: &[u32], seed: u64) -> Result<(), TestCaseError> {
    let mut a = ExemplarMemory::capacity_balanced(capacity, seed);
    for (i, &l) in order_a.iter().enumerate() {
        a.offer(i, l);
        prop_assert!(a.len() <= capacity);
        if a.is_full() {
            prop_assert!(a.imbalance() <= 1, "full and unbalanced: {:?}", a.class_counts());
        }
    }
    let mut b = ExemplarMemory::capacity_balanced(capacity, seed ^ 0x5eed);
    for (i, &l) in order_b.iter().enumerate() {
        b.offer(i, l);
    }
    prop_assert_eq!(sorted_counts(&a), sorted_counts(&b));
    Ok(())
}
