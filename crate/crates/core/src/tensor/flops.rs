use std::collections::BTreeMap;

/// Exact multiply-accumulate counts, keyed by the stage that issued them.
///
/// Only matrix products are counted; a product of an `m x k` and a
/// `k x n` matrix adds `m * k * n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    counts: BTreeMap<&'static str, u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: &'static str, macs: u64) {
        *self.counts.entry(stage).or_insert(0) += macs;
    }

    pub fn get(&self, stage: &str) -> u64 {
        self.counts.get(stage).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn stages(&self) -> impl Iterator<Item = (&'static str, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    pub fn reset(&mut self) {
        self.counts.clear();
    }
}
