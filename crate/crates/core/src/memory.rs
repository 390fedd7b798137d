//! Capacity-bounded, class-balanced exemplar memory.
//!
//! The same type backs the replay memory used during training
//! (`capacity_balanced`, filled by the greedy sampler) and the evaluation
//! memory used to refit the output layer (`per_class_quota`). Memories store
//! example indices and label snapshots; pixels stay in the dataset.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, TaskView};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    CapacityBalanced,
    PerClassQuota,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredExample {
    pub index: usize,
    pub label: u32,
}

/// Outcome of offering one example to the greedy sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    Rejected,
    Invalid,
}

#[derive(Debug, Clone)]
pub struct ExemplarMemory {
    policy: MemoryPolicy,
    capacity: usize,
    per_class_quota: usize,
    seed: u64,
    num_classes: Option<usize>,
    slots: BTreeMap<u32, Vec<usize>>,
    rng: Rng,
}

impl PartialEq for ExemplarMemory {
    fn eq(&self, other: &Self) -> bool {
        self.policy == other.policy
            && self.capacity == other.capacity
            && self.per_class_quota == other.per_class_quota
            && self.seed == other.seed
            && self.num_classes == other.num_classes
            && self.slots == other.slots
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

impl ExemplarMemory {
    /// Replay memory filled by the greedy class-balanced sampler.
    pub fn capacity_balanced(capacity: usize, seed: u64) -> Self {
        Self::new(MemoryPolicy::CapacityBalanced, capacity, 0, seed)
    }

    /// Evaluation memory holding up to `quota` examples of every class.
    pub fn per_class_quota(quota: usize, seed: u64) -> Self {
        Self::new(MemoryPolicy::PerClassQuota, 0, quota, seed)
    }

    fn new(policy: MemoryPolicy, capacity: usize, per_class_quota: usize, seed: u64) -> Self {
        Self {
            policy,
            capacity,
            per_class_quota,
            seed,
            num_classes: None,
            slots: BTreeMap::new(),
            rng: Rng::seed_from_u64(seed),
        }
    }

    /// Labels at or above `num_classes` are rejected on insertion.
    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = Some(num_classes);
        self
    }

    pub fn policy(&self) -> MemoryPolicy {
        self.policy
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn quota(&self) -> usize {
        self.per_class_quota
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.policy == MemoryPolicy::CapacityBalanced && self.len() >= self.capacity
    }

    pub fn slots(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.slots
    }

    /// Per-class counts over every class the memory has seen.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        self.slots.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn classes(&self) -> Vec<u32> {
        self.slots.iter().filter(|(_, v)| !v.is_empty()).map(|(&c, _)| c).collect()
    }

    /// All stored examples, ordered by class then insertion.
    pub fn items(&self) -> Vec<StoredExample> {
        self.slots
            .iter()
            .flat_map(|(&label, v)| v.iter().map(move |&index| StoredExample { index, label }))
            .collect()
    }

    /// `max - min` over known classes.
    pub fn imbalance(&self) -> usize {
        let max = self.slots.values().map(Vec::len).max().unwrap_or(0);
        let min = self.slots.values().map(Vec::len).min().unwrap_or(0);
        max - min
    }

    /// Streams examples through the greedy sampler.
    pub fn greedy_update<'a, I>(&mut self, stream: I) -> Result<()>
    where
        I: IntoIterator<Item = LabeledExample<'a>>,
    {
        if self.policy != MemoryPolicy::CapacityBalanced {
            return Err(Error::protocol("greedy_update needs a capacity_balanced memory"));
        }
        for ex in stream {
            self.offer(ex.index, ex.label);
        }
        Ok(())
    }

    /// Offers one example to the greedy sampler.
    ///
    /// While the memory has room the example is admitted. Once full, an
    /// example of class `c` is admitted only if `c` holds fewer than
    /// `ceil(capacity / known_classes)` slots, evicting a random element of a
    /// largest class. After every step the memory is never left full and
    /// unbalanced: further largest-class evictions run until the per-class
    /// spread is at most one or the memory has a free slot.
    pub fn offer(&mut self, index: usize, label: u32) -> Admission {
        if self.policy != MemoryPolicy::CapacityBalanced {
            warn!("offer() on a per-class-quota memory is ignored");
            return Admission::Invalid;
        }
        if self.num_classes.is_some_and(|k| label as usize >= k) {
            warn!("rejecting example {index}: label {label} is not a valid class id");
            return Admission::Invalid;
        }
        if self.capacity == 0 {
            return Admission::Rejected;
        }
        if self.slots.get(&label).is_some_and(|v| v.contains(&index)) {
            return Admission::Rejected;
        }
        self.slots.entry(label).or_default();
        if self.len() < self.capacity {
            self.slots.get_mut(&label).expect("registered").push(index);
            self.restore_balance();
            return Admission::Admitted;
        }
        let known = self.slots.len();
        let share = self.capacity.div_ceil(known);
        if self.slots[&label].len() >= share {
            return Admission::Rejected;
        }
        self.evict_from_largest();
        self.slots.get_mut(&label).expect("registered").push(index);
        self.restore_balance();
        Admission::Admitted
    }

    fn restore_balance(&mut self) {
        while self.len() >= self.capacity && self.imbalance() > 1 {
            self.evict_from_largest();
        }
    }

    fn evict_from_largest(&mut self) {
        let max = self.slots.values().map(Vec::len).max().unwrap_or(0);
        if max == 0 {
            return;
        }
        let largest: Vec<u32> = self.slots.iter().filter(|(_, v)| v.len() == max).map(|(&c, _)| c).collect();
        let class = *largest.choose(&mut self.rng).expect("nonempty");
        let bucket = self.slots.get_mut(&class).expect("present");
        let victim = self.rng.random_range(0..bucket.len());
        bucket.swap_remove(victim);
    }

    /// Adds up to `per_class_quota` seeded-uniform examples of every class in
    /// the view that the memory has not stored yet. Stored classes are left
    /// alone. The view must expose labels.
    pub fn quota_update(&mut self, view: &TaskView<'_>) -> Result<()> {
        if self.policy != MemoryPolicy::PerClassQuota {
            return Err(Error::protocol("quota_update needs a per_class_quota memory"));
        }
        let labels = view
            .labels()
            .map_err(|_| Error::protocol("the evaluation memory needs labeled examples"))?;
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (&i, &l) in view.indices.iter().zip(&labels) {
            if self.num_classes.is_some_and(|k| l as usize >= k) {
                warn!("skipping example {i}: label {l} is not a valid class id");
                continue;
            }
            by_class.entry(l).or_default().push(i);
        }
        for (class, mut pool) in by_class {
            if self.slots.contains_key(&class) {
                continue;
            }
            pool.sort_unstable();
            pool.dedup();
            pool.shuffle(&mut self.rng);
            pool.truncate(self.per_class_quota);
            self.slots.insert(class, pool);
        }
        Ok(())
    }

    /// One class-balanced batch from a fresh sampling cycle.
    pub fn balanced_batch(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<StoredExample>> {
        let mut sampler = BalancedSampler::new(self, Rng::seed_from_u64(rng.random()))?;
        Ok(sampler.next_batch(batch_size))
    }

    pub fn to_manifest(&self) -> MemoryManifest {
        MemoryManifest {
            policy: self.policy,
            capacity: self.capacity,
            per_class_quota: self.per_class_quota,
            seed: self.seed,
            num_classes: self.num_classes,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            slots: self.slots.clone(),
        }
    }

    pub fn from_manifest(m: &MemoryManifest) -> Result<Self> {
        let mut rng = Rng::seed_from_u64(m.seed);
        let pos: u128 = m
            .rng_word_pos
            .parse()
            .map_err(|_| Error::config(format!("bad rng position `{}`", m.rng_word_pos)))?;
        rng.set_word_pos(pos);
        Ok(Self {
            policy: m.policy,
            capacity: m.capacity,
            per_class_quota: m.per_class_quota,
            seed: m.seed,
            num_classes: m.num_classes,
            slots: m.slots.clone(),
            rng,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_manifest())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_manifest(&serde_json::from_str(text)?)
    }
}

/// JSON form of a memory. Reloading reproduces the memory exactly, including
/// the position of its eviction stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub policy: MemoryPolicy,
    pub capacity: usize,
    pub per_class_quota: usize,
    pub seed: u64,
    pub num_classes: Option<usize>,
    pub rng_word_pos: String,
    pub slots: BTreeMap<u32, Vec<usize>>,
}

/// Draws class-balanced batches from a memory snapshot, without replacement
/// within a cycle over all stored examples.
///
/// Each cycle shuffles every class and interleaves them round-robin, so any
/// prefix of a cycle is balanced to within one example per class.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: Vec<(u32, Vec<usize>)>,
    order: Vec<StoredExample>,
    pos: usize,
    rng: Rng,
}

impl BalancedSampler {
    pub fn new(memory: &ExemplarMemory, rng: Rng) -> Result<Self> {
        if memory.is_empty() {
            return Err(Error::argument("cannot sample from an empty memory"));
        }
        let by_class = memory
            .slots
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&c, v)| (c, v.clone()))
            .collect();
        let mut s = Self { by_class, order: Vec::new(), pos: 0, rng };
        s.refill();
        Ok(s)
    }

    pub fn cycle_len(&self) -> usize {
        self.by_class.iter().map(|(_, v)| v.len()).sum()
    }

    fn refill(&mut self) {
        let mut classes = self.by_class.clone();
        for (_, v) in &mut classes {
            v.shuffle(&mut self.rng);
        }
        let rounds = classes.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let mut order = Vec::with_capacity(self.cycle_len());
        let mut class_order: Vec<usize> = (0..classes.len()).collect();
        for r in 0..rounds {
            class_order.shuffle(&mut self.rng);
            for &k in &class_order {
                let (label, v) = &classes[k];
                if let Some(&index) = v.get(r) {
                    order.push(StoredExample { index, label: *label });
                }
            }
        }
        self.order = order;
        self.pos = 0;
    }

    /// The next `batch_size` examples. A request larger than the memory
    /// returns every stored example once, shuffled.
    pub fn next_batch(&mut self, batch_size: usize) -> Vec<StoredExample> {
        let total = self.cycle_len();
        if batch_size >= total {
            self.refill();
            let mut all = std::mem::take(&mut self.order);
            all.shuffle(&mut self.rng);
            self.refill();
            return all;
        }
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.order.len() {
                self.refill();
            }
            let take = (batch_size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, ImageShape};
    use crate::rng::rng_from_seed;

    fn offer_all(m: &mut ExemplarMemory, stream: &[(usize, u32)]) {
        for &(i, l) in stream {
            m.offer(i, l);
        }
    }

    /// Straight simulation of the admission rule on class counts only.
    fn simulate_counts(capacity: usize, labels: &[u32]) -> BTreeMap<u32, usize> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in labels {
            counts.entry(l).or_insert(0);
            let total: usize = counts.values().sum();
            let spread = |c: &BTreeMap<u32, usize>| {
                c.values().max().unwrap() - c.values().min().unwrap()
            };
            let evict = |c: &mut BTreeMap<u32, usize>| {
                let max = *c.values().max().unwrap();
                let k = *c.iter().find(|(_, &v)| v == max).unwrap().0;
                *c.get_mut(&k).unwrap() -= 1;
            };
            if total < capacity {
                *counts.get_mut(&l).unwrap() += 1;
            } else if counts[&l] < capacity.div_ceil(counts.len()) {
                evict(&mut counts);
                *counts.get_mut(&l).unwrap() += 1;
            } else {
                continue;
            }
            while counts.values().sum::<usize>() >= capacity && spread(&counts) > 1 {
                evict(&mut counts);
            }
        }
        counts
    }

    #[test]
    fn two_classes_fifty_each_capacity_ten() {
        let stream: Vec<(usize, u32)> = (0..100).map(|i| (i, (i % 2) as u32)).collect();
        let mut m = ExemplarMemory::capacity_balanced(10, 3);
        offer_all(&mut m, &stream);
        let labels: Vec<u32> = stream.iter().map(|s| s.1).collect();
        let oracle = simulate_counts(10, &labels);
        assert_eq!(m.class_counts(), oracle);
        assert_eq!(m.class_counts(), BTreeMap::from([(0, 5), (1, 5)]));
    }

    #[test]
    fn single_class_fills_memory() {
        let mut m = ExemplarMemory::capacity_balanced(10, 0);
        offer_all(&mut m, &(0..50).map(|i| (i, 7)).collect::<Vec<_>>());
        assert_eq!(m.class_counts(), BTreeMap::from([(7, 10)]));
    }

    #[test]
    fn capacity_nine_two_classes_all_orders_of_six_element_stream() {
        // every arrangement of three A's and three B's, each class offered repeatedly
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let base: Vec<u32> = (0..6).map(|b| (mask >> b) & 1).collect();
            let labels: Vec<u32> = base.iter().cycle().take(60).copied().collect();
            let mut m = ExemplarMemory::capacity_balanced(9, u64::from(mask));
            for (i, &l) in labels.iter().enumerate() {
                m.offer(i, l);
                assert!(m.len() <= 9);
            }
            let c = m.class_counts();
            let mut v: Vec<usize> = c.values().copied().collect();
            v.sort_unstable();
            assert_eq!(v, vec![4, 5], "mask {mask:06b}");
        }
    }

    #[test]
    fn new_class_into_full_memory_never_leaves_it_full_and_unbalanced() {
        let mut m = ExemplarMemory::capacity_balanced(10, 1);
        offer_all(&mut m, &(0..10).map(|i| (i, 0)).collect::<Vec<_>>());
        assert_eq!(m.len(), 10);
        m.offer(100, 1);
        assert!(!m.is_full() || m.imbalance() <= 1);
        assert_eq!(m.class_counts()[&1], 1);
    }

    #[test]
    fn invalid_label_rejected() {
        let mut m = ExemplarMemory::capacity_balanced(4, 0).with_num_classes(3);
        assert_eq!(m.offer(0, 5), Admission::Invalid);
        assert!(m.is_empty());
        assert_eq!(m.offer(0, 2), Admission::Admitted);
        assert_eq!(m.offer(0, 2), Admission::Rejected);
    }

    fn labeled_dataset(counts: &[usize]) -> Dataset {
        let labels: Vec<u32> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
            .collect();
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        Dataset::new("toy", ImageShape::new(1, 1, 1), names, vec![0.0; labels.len()], labels).unwrap()
    }

    #[test]
    fn quota_twenty_ten_classes_of_five_hundred() {
        let d = labeled_dataset(&[500; 10]);
        let idx: Vec<usize> = (0..d.len()).collect();
        let mut m = ExemplarMemory::per_class_quota(20, 9);
        m.quota_update(&TaskView::labeled(&d, &idx)).unwrap();
        assert_eq!(m.len(), 200);
        assert!(m.class_counts().values().all(|&n| n == 20));
        for (c, v) in m.slots() {
            assert!(v.iter().all(|&i| d.label(i) == *c));
        }
    }

    #[test]
    fn quota_bounded_by_availability() {
        let d = labeled_dataset(&[5, 30]);
        let idx: Vec<usize> = (0..d.len()).collect();
        let mut m = ExemplarMemory::per_class_quota(20, 9);
        m.quota_update(&TaskView::labeled(&d, &idx)).unwrap();
        assert_eq!(m.class_counts(), BTreeMap::from([(0, 5), (1, 20)]));
    }

    #[test]
    fn quota_accumulates_over_tasks_and_keeps_old_classes() {
        let d = labeled_dataset(&[30; 20]);
        let first: Vec<usize> = (0..d.len()).filter(|&i| d.label(i) < 10).collect();
        let second: Vec<usize> = (0..d.len()).filter(|&i| d.label(i) >= 10).collect();
        let mut m = ExemplarMemory::per_class_quota(20, 2);
        m.quota_update(&TaskView::labeled(&d, &first)).unwrap();
        let before = m.slots().clone();
        m.quota_update(&TaskView::labeled(&d, &second)).unwrap();
        assert_eq!(m.len(), 400);
        for (c, v) in before {
            assert_eq!(m.slots()[&c], v);
        }
        // re-offering a stored class changes nothing
        m.quota_update(&TaskView::labeled(&d, &first)).unwrap();
        assert_eq!(m.len(), 400);
    }

    #[test]
    fn quota_needs_labels() {
        let d = labeled_dataset(&[3]);
        let idx = vec![0, 1, 2];
        let mut m = ExemplarMemory::per_class_quota(2, 0);
        assert!(matches!(m.quota_update(&TaskView::unlabeled(&d, &idx)), Err(Error::Protocol(_))));
    }

    #[test]
    fn wrong_policy_is_protocol_error() {
        let d = labeled_dataset(&[3]);
        let idx = vec![0];
        let mut g = ExemplarMemory::capacity_balanced(3, 0);
        assert!(matches!(g.quota_update(&TaskView::labeled(&d, &idx)), Err(Error::Protocol(_))));
        let mut q = ExemplarMemory::per_class_quota(3, 0);
        assert!(matches!(q.greedy_update([d.example(0)]), Err(Error::Protocol(_))));
    }

    #[test]
    fn balanced_batches_over_one_cycle() {
        let mut m = ExemplarMemory::capacity_balanced(10, 0);
        offer_all(&mut m, &(0..10).map(|i| (i, (i % 2) as u32)).collect::<Vec<_>>());
        let mut s = BalancedSampler::new(&m, rng_from_seed(4)).unwrap();
        let mut counts = [0usize; 2];
        let mut seen = std::collections::BTreeSet::new();
        for bs in [4, 4, 2] {
            let b = s.next_batch(bs);
            assert_eq!(b.len(), bs);
            for e in b {
                counts[e.label as usize] += 1;
                assert!(seen.insert(e.index), "repeat within a cycle");
            }
        }
        assert_eq!(counts, [5, 5]);
    }

    #[test]
    fn oversized_batch_returns_everything_once() {
        let mut m = ExemplarMemory::capacity_balanced(3, 0);
        m.offer(42, 0);
        let b = m.balanced_batch(4, &mut rng_from_seed(0)).unwrap();
        assert_eq!(b, vec![StoredExample { index: 42, label: 0 }]);
    }

    #[test]
    fn batches_are_seeded() {
        let mut m = ExemplarMemory::capacity_balanced(20, 0);
        offer_all(&mut m, &(0..20).map(|i| (i, (i % 4) as u32)).collect::<Vec<_>>());
        let a = m.balanced_batch(8, &mut rng_from_seed(11)).unwrap();
        let b = m.balanced_batch(8, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            ExemplarMemory::capacity_balanced(2, 0).balanced_batch(1, &mut rng_from_seed(0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn manifest_round_trip_reproduces_future_updates() {
        let mut m = ExemplarMemory::capacity_balanced(8, 5).with_num_classes(4);
        offer_all(&mut m, &(0..30).map(|i| (i, (i % 3) as u32)).collect::<Vec<_>>());
        let mut back = ExemplarMemory::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let tail: Vec<(usize, u32)> = (30..60).map(|i| (i, (i % 4) as u32)).collect();
        offer_all(&mut m, &tail);
        offer_all(&mut back, &tail);
        assert_eq!(back.slots(), m.slots());
    }

    #[test]
    fn memories_are_independent_values() {
        let mut me = ExemplarMemory::capacity_balanced(4, 0);
        let mut mo = ExemplarMemory::per_class_quota(2, 0);
        let d = labeled_dataset(&[3, 3]);
        let idx: Vec<usize> = (0..6).collect();
        mo.quota_update(&TaskView::labeled(&d, &idx)).unwrap();
        let snapshot = mo.clone();
        me.greedy_update(idx.iter().map(|&i| d.example(i))).unwrap();
        me.offer(99, 1);
        assert_eq!(mo, snapshot);
    }
}
