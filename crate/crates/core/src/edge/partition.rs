use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Shuffled near-equal shards.
    Iid,
    /// Label-sorted contiguous shards (non-iid locality).
    LabelShard,
}

impl std::str::FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "label-shard" => Ok(Self::LabelShard),
            _ => Err(Error::Parse(format!("unknown partition mode `{s}`"))),
        }
    }
}

/// Sizes differ by at most one; the first `len % n` shards take the extra sample.
fn shard_sizes(len: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| len / n + usize::from(i < len % n))
}

pub fn partition_dataset<R: Rng + ?Sized>(
    data: &LabeledDataset,
    n_devices: usize,
    mode: PartitionMode,
    rng: &mut R,
) -> Result<Vec<LabeledDataset>> {
    if n_devices == 0 || n_devices > data.len() {
        return Err(Error::TooManyDevices { devices: n_devices, samples: data.len() });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    match mode {
        PartitionMode::Iid => order.shuffle(rng),
        PartitionMode::LabelShard => order.sort_by_key(|&i| data.samples[i].1),
    }
    let mut shards = Vec::with_capacity(n_devices);
    let mut rest = order.as_slice();
    for size in shard_sizes(data.len(), n_devices) {
        let (head, tail) = rest.split_at(size);
        rest = tail;
        let samples = head.iter().map(|&i| data.samples[i].clone()).collect();
        shards.push(LabeledDataset { samples, ..LabeledDataset::empty(data.split, data.num_classes, data.content) });
    }
    Ok(shards)
}
