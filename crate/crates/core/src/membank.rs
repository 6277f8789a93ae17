//! Memory banks: a self-sorting bank that keeps the `K` most mutually
//! dissimilar confident entries, and a FIFO bank of the most recent frames.
//!
//! Entries carry an arbitrary token payload `T` so the same policies drive both
//! plain inference and the differentiable training graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to cosine similarities before they are normalized into
/// retrieval probabilities.
pub const SIM_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<T> {
    pub tokens: T,
    /// Unit-norm summary used for similarity.
    pub pooled: Vec<f64>,
    pub confidence: f64,
    pub source_index: usize,
    /// Assigned by the bank on insertion.
    pub insertion_tick: u64,
}

impl<T> MemoryEntry<T> {
    pub fn new(tokens: T, pooled: Vec<f64>, confidence: f64, source_index: usize) -> Self {
        Self {
            tokens,
            pooled,
            confidence: confidence.clamp(0.0, 1.0),
            source_index,
            insertion_tick: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankPolicy {
    SelfSorting,
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    WeightedSample,
    TopK,
    RecentK,
}

/// Bank settings shared by the inference pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub capacity: usize,
    pub retrieve_k: usize,
    pub conf_threshold: f64,
    pub retrieval: RetrievalMode,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            capacity: 8,
            retrieve_k: 4,
            conf_threshold: 0.7,
            retrieval: RetrievalMode::WeightedSample,
        }
    }
}

/// Result of offering a candidate to the bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Update {
    /// Confidence gate not passed.
    Rejected,
    Appended,
    /// Candidate inserted and the entry with this tick evicted.
    Evicted(u64),
    /// Candidate itself lost the retention contest.
    Discarded,
}

#[derive(Debug, Clone)]
pub struct MemoryBank<T> {
    entries: Vec<MemoryEntry<T>>,
    capacity: usize,
    policy: BankPolicy,
    next_tick: u64,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// `D_i = Σ_{j≠i} (1 − cos(E_i, E_j))` for every candidate.
pub fn total_dissimilarity<V: AsRef<[f64]>>(candidates: &[V]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidates".into()));
    }
    let n = candidates.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_similarity(candidates[i].as_ref(), candidates[j].as_ref())?;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    if n == 1 && norm(candidates[0].as_ref()) == 0.0 {
        return Err(Error::InvalidArgument("zero summary vector".into()));
    }
    // Terms are summed in ascending order so identical vectors score bitwise equal.
    Ok((0..n)
        .map(|i| {
            let mut terms: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| 1.0 - sim[i * n + j]).collect();
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect())
}

impl<T> MemoryBank<T> {
    pub fn new(capacity: usize, policy: BankPolicy) -> Self {
        assert!(capacity >= 1, "bank capacity must be positive");
        Self {
            entries: Vec::new(),
            capacity,
            policy,
            next_tick: 0,
        }
    }

    pub fn entries(&self) -> &[MemoryEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> BankPolicy {
        self.policy
    }

    fn stamp(&mut self, mut e: MemoryEntry<T>) -> MemoryEntry<T> {
        e.insertion_tick = self.next_tick;
        self.next_tick += 1;
        e
    }

    /// Dispatch on the bank's policy.
    pub fn update(&mut self, candidate: MemoryEntry<T>, conf_threshold: f64) -> Result<Update> {
        match self.policy {
            BankPolicy::SelfSorting => self.update_self_sorting(candidate, conf_threshold),
            BankPolicy::Fifo => Ok(self.update_fifo(candidate)),
        }
    }

    /// Confidence-gated insertion keeping the top-`K` entries by total
    /// dissimilarity; ties keep the older entry.
    pub fn update_self_sorting(&mut self, candidate: MemoryEntry<T>, conf_threshold: f64) -> Result<Update> {
        if self.policy != BankPolicy::SelfSorting {
            return Err(Error::InvalidArgument("bank policy is not self-sorting".into()));
        }
        if candidate.confidence <= conf_threshold {
            return Ok(Update::Rejected);
        }
        let candidate = self.stamp(candidate);
        if self.entries.len() < self.capacity {
            self.entries.push(candidate);
            return Ok(Update::Appended);
        }
        self.entries.push(candidate);
        let d = total_dissimilarity(&self.entries.iter().map(|e| e.pooled.as_slice()).collect::<Vec<_>>())?;
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            d[b].total_cmp(&d[a])
                .then(self.entries[a].insertion_tick.cmp(&self.entries[b].insertion_tick))
        });
        let dropped = order[self.capacity];
        let removed = self.entries.remove(dropped);
        if dropped == self.entries.len() {
            Ok(Update::Discarded)
        } else {
            Ok(Update::Evicted(removed.insertion_tick))
        }
    }

    /// Append, evicting the oldest entry once over capacity.
    pub fn update_fifo(&mut self, candidate: MemoryEntry<T>) -> Update {
        let candidate = self.stamp(candidate);
        self.entries.push(candidate);
        if self.entries.len() > self.capacity {
            let old = self.entries.remove(0);
            return Update::Evicted(old.insertion_tick);
        }
        Update::Appended
    }

    /// Normalized retrieval distribution `p_i ∝ max(cos(query, E_i), ε)`.
    pub fn retrieval_probabilities(&self, query: &[f64]) -> Result<Vec<f64>> {
        if norm(query) == 0.0 {
            return Err(Error::InvalidArgument("zero query vector".into()));
        }
        let sims = self
            .entries
            .iter()
            .map(|e| cosine_similarity(query, &e.pooled).map(|s| s.max(SIM_EPSILON)))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = sims.iter().sum();
        Ok(sims.into_iter().map(|s| s / total).collect())
    }

    /// Select up to `k` entries. Results are returned in insertion order.
    pub fn retrieve<R: Rng>(&self, query: &[f64], k: usize, mode: RetrievalMode, rng: &mut R) -> Result<Vec<&MemoryEntry<T>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if norm(query) == 0.0 {
            return Err(Error::InvalidArgument("zero query vector".into()));
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let take = k.min(self.entries.len());
        let mut picked: Vec<usize> = match mode {
            RetrievalMode::WeightedSample => {
                let mut weights = self.retrieval_probabilities(query)?;
                let mut out = Vec::with_capacity(take);
                for _ in 0..take {
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut choice = None;
                    for (i, &w) in weights.iter().enumerate() {
                        if w <= 0.0 {
                            continue;
                        }
                        choice = Some(i);
                        if u < w {
                            break;
                        }
                        u -= w;
                    }
                    let i = choice.expect("positive weight remains");
                    weights[i] = 0.0;
                    out.push(i);
                }
                out
            }
            RetrievalMode::TopK => {
                let sims = self
                    .entries
                    .iter()
                    .map(|e| cosine_similarity(query, &e.pooled))
                    .collect::<Result<Vec<_>>>()?;
                let mut order: Vec<usize> = (0..self.entries.len()).collect();
                order.sort_by(|&a, &b| {
                    sims[b].total_cmp(&sims[a])
                        .then(self.entries[a].insertion_tick.cmp(&self.entries[b].insertion_tick))
                });
                order.truncate(take);
                order
            }
            RetrievalMode::RecentK => (self.entries.len() - take..self.entries.len()).collect(),
        };
        picked.sort_by_key(|&i| self.entries[i].insertion_tick);
        Ok(picked.into_iter().map(|i| &self.entries[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(v: &[f64], conf: f64) -> MemoryEntry<()> {
        MemoryEntry::new((), v.to_vec(), conf, 0)
    }

    #[test]
    fn dissimilarity_examples() {
        assert_eq!(total_dissimilarity(&[vec![1.0, 0.0]]).unwrap(), vec![0.0]);
        assert_eq!(total_dissimilarity(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![1.0, 1.0]);
        let d = total_dissimilarity(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(d, vec![1.0, 2.0, 1.0]);
        assert!(total_dissimilarity(&[vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(total_dissimilarity(&[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn self_sorting_gate_and_underfull() {
        let mut bank = MemoryBank::new(2, BankPolicy::SelfSorting);
        assert_eq!(bank.update_self_sorting(entry(&[1.0, 0.0], 0.5), 0.7).unwrap(), Update::Rejected);
        assert_eq!(bank.update_self_sorting(entry(&[1.0, 0.0], 0.7), 0.7).unwrap(), Update::Rejected);
        assert!(bank.is_empty());
        assert_eq!(bank.update_self_sorting(entry(&[1.0, 0.0], 0.9), 0.7).unwrap(), Update::Appended);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn self_sorting_tie_evicts_newer_duplicate() {
        let mut bank = MemoryBank::new(2, BankPolicy::SelfSorting);
        bank.update_self_sorting(entry(&[1.0, 0.0], 0.9), 0.7).unwrap();
        bank.update_self_sorting(entry(&[0.0, 1.0], 0.9), 0.7).unwrap();
        let u = bank.update_self_sorting(entry(&[1.0, 0.0], 0.9), 0.7).unwrap();
        assert_eq!(u, Update::Discarded);
        let ticks: Vec<u64> = bank.entries().iter().map(|e| e.insertion_tick).collect();
        assert_eq!(ticks, vec![0, 1]);
    }

    #[test]
    fn fifo_queue_semantics() {
        let mut bank = MemoryBank::new(4, BankPolicy::Fifo);
        for i in 0..5 {
            let mut e = entry(&[1.0, i as f64], 0.0);
            e.source_index = i;
            bank.update_fifo(e);
        }
        let src: Vec<usize> = bank.entries().iter().map(|e| e.source_index).collect();
        assert_eq!(src, vec![1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got: Vec<usize> = bank
            .retrieve(&[1.0, 0.0], 2, RetrievalMode::RecentK, &mut rng)
            .unwrap()
            .iter()
            .map(|e| e.source_index)
            .collect();
        assert_eq!(got, vec![3, 4]);
    }

    #[test]
    fn probabilities_uniform_and_clamped() {
        let mut bank = MemoryBank::new(8, BankPolicy::Fifo);
        for _ in 0..4 {
            bank.update_fifo(entry(&[0.6, 0.8], 1.0));
        }
        for p in bank.retrieval_probabilities(&[1.0, 2.0]).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let mut bank = MemoryBank::new(8, BankPolicy::Fifo);
        bank.update_fifo(entry(&[1.0, 0.0], 1.0));
        bank.update_fifo(entry(&[0.0, 1.0], 1.0));
        let p = bank.retrieval_probabilities(&[1.0, 0.0]).unwrap();
        assert!((p[0] - 1.0 / (1.0 + 1e-6)).abs() < 1e-15);
        assert!((p[1] - 1e-6 / (1.0 + 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn retrieve_edge_cases() {
        let bank: MemoryBank<()> = MemoryBank::new(4, BankPolicy::SelfSorting);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(bank.retrieve(&[1.0], 2, RetrievalMode::WeightedSample, &mut rng).unwrap().is_empty());
        assert!(bank.retrieve(&[0.0], 2, RetrievalMode::TopK, &mut rng).is_err());
        assert!(bank.retrieve(&[1.0], 0, RetrievalMode::TopK, &mut rng).is_err());

        let mut bank = MemoryBank::new(4, BankPolicy::Fifo);
        for v in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            bank.update_fifo(entry(&v, 1.0));
        }
        for mode in [RetrievalMode::WeightedSample, RetrievalMode::TopK, RetrievalMode::RecentK] {
            assert_eq!(bank.retrieve(&[1.0, 0.2], 5, mode, &mut rng).unwrap().len(), 3);
        }
        let top: Vec<u64> = bank
            .retrieve(&[1.0, 0.1], 2, RetrievalMode::TopK, &mut rng)
            .unwrap()
            .iter()
            .map(|e| e.insertion_tick)
            .collect();
        assert_eq!(top, vec![0, 2]);
    }

    #[test]
    fn weighted_sample_is_seed_deterministic() {
        let mut bank = MemoryBank::new(8, BankPolicy::Fifo);
        for i in 0..8 {
            bank.update_fifo(entry(&[1.0, i as f64 * 0.3, (i % 3) as f64], 1.0));
        }
        let pick = |seed| -> Vec<u64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            bank.retrieve(&[0.5, 1.0, 0.0], 3, RetrievalMode::WeightedSample, &mut rng)
                .unwrap()
                .iter()
                .map(|e| e.insertion_tick)
                .collect()
        };
        assert_eq!(pick(42), pick(42));
    }

    proptest! {
        #[test]
        fn bank_never_exceeds_capacity(
            cap in 1usize..6,
            ops in proptest::collection::vec((any::<bool>(), 0.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..40),
        ) {
            let mut ss = MemoryBank::new(cap, BankPolicy::SelfSorting);
            let mut fifo = MemoryBank::new(cap, BankPolicy::Fifo);
            for (which, conf, a, b) in ops {
                let v = [a, b, 0.1];
                if which {
                    ss.update_self_sorting(entry(&v, conf), 0.3).unwrap();
                } else {
                    fifo.update_fifo(entry(&v, conf));
                }
                prop_assert!(ss.len() <= cap && fifo.len() <= cap);
                for bank in [&ss, &fifo] {
                    let ticks: Vec<u64> = bank.entries().iter().map(|e| e.insertion_tick).collect();
                    prop_assert!(ticks.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }
}
