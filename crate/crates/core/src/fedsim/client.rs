use rand::seq::SliceRandom;

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Cycles through `0..n` in a seeded shuffled order, reshuffling each epoch.
/// The last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSchedule {
            order,
            pos: 0,
            epoch: 0,
            rng,
        }
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// One participant: its data partition and batch iterator.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// Indices of this partition in the source dataset.
    pub indices: Vec<usize>,
    pub data: LabeledDataset,
    pub schedule: BatchSchedule,
    pub seed: u64,
}

impl ClientState {
    pub fn new(client_id: usize, indices: Vec<usize>, data: LabeledDataset, seed: u64) -> Self {
        let schedule = BatchSchedule::new(data.len(), seed);
        ClientState {
            client_id,
            indices,
            data,
            schedule,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// IID seeded partition; sizes differ by at most one (earlier clients get
/// the remainder).
pub fn partition(dataset: &LabeledDataset, num_clients: usize, seed: u64) -> Result<Vec<ClientState>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    if num_clients == 0 || num_clients > dataset.len() {
        return Err(Error::TooManyClients {
            clients: num_clients,
            samples: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::rng(rng::derive_str(seed, "partition")));
    let base = dataset.len() / num_clients;
    let extra = dataset.len() % num_clients;
    let mut start = 0;
    Ok((0..num_clients)
        .map(|c| {
            let size = base + usize::from(c < extra);
            let indices = order[start..start + size].to_vec();
            start += size;
            let data = dataset.subset(&indices);
            let client_seed = rng::derive(rng::derive_str(seed, "client"), c as u64);
            ClientState::new(c, indices, data, client_seed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::tensor::Tensor;

    fn toy(n: usize) -> LabeledDataset {
        let inputs = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(inputs, vec![0; n], 2, BTreeMap::new()).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let sizes = |n, c| partition(&toy(n), c, 1).unwrap().iter().map(ClientState::len).collect::<Vec<_>>();
        assert_eq!(sizes(100, 2), vec![50, 50]);
        assert_eq!(sizes(101, 2), vec![51, 50]);
        assert_eq!(sizes(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn partition_is_disjoint_exhaustive_and_deterministic() {
        let a = partition(&toy(37), 4, 8).unwrap();
        let b = partition(&toy(37), 4, 8).unwrap();
        let mut all: Vec<usize> = a.iter().flat_map(|c| c.indices.clone()).collect();
        assert_eq!(all, b.iter().flat_map(|c| c.indices.clone()).collect::<Vec<_>>());
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn too_many_clients() {
        assert!(matches!(partition(&toy(3), 4, 0), Err(Error::TooManyClients { .. })));
    }

    #[test]
    fn schedule_covers_each_epoch_once() {
        let mut s = BatchSchedule::new(10, 3);
        let mut seen: Vec<usize> = (0..4).flat_map(|_| s.next_batch(3)).collect();
        assert_eq!(s.epoch(), 0);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let next = s.next_batch(3);
        assert_eq!((s.epoch(), next.len()), (1, 3));
    }
}
