//! IDX decoding and the label-sorted, shard-based non-IID client partition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::{self, PARTITION_TAG};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

pub const POINTS_PER_CLIENT: usize = 600;
pub const SHARDS_PER_CLIENT: usize = 2;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32_be()?;
        if magic != expected {
            return Err(Error::Format(format!(
                "magic number {magic:#010x}, expected {expected:#010x}"
            )));
        }
        Ok(())
    }
}

fn dim(value: u32) -> usize {
    usize::try_from(value).unwrap_or(usize::MAX)
}

/// Raw images decoded from an IDX3 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IDX_IMAGES_MAGIC)?;
    let count = dim(r.u32_be()?);
    let rows = dim(r.u32_be()?);
    let cols = dim(r.u32_be()?);
    let total = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let pixels = r.take(total)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Decodes an IDX1 label stream; every label must be an MNIST digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IDX_LABELS_MAGIC)?;
    let count = dim(r.u32_be()?);
    let labels = r.take(count)?;
    if let Some(pos) = labels.iter().position(|&y| usize::from(y) >= MNIST_CLASSES) {
        return Err(Error::Data(format!(
            "label {} at position {pos} outside [0, {MNIST_CLASSES})",
            labels[pos]
        )));
    }
    Ok(labels.to_vec())
}

/// Features scaled to `[0, 1]` with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                what: "dataset features",
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        let num_classes = usize::from(labels.iter().copied().max().unwrap_or(0)) + 1;
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes: num_classes.max(MNIST_CLASSES),
        })
    }

    /// Pairs decoded images with labels, dividing raw bytes by 255.
    pub fn from_idx(images: &IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        let features = images
            .pixels
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        Self::new(features, labels, images.rows * images.cols)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Dataset indices ordered by label, keeping the original order within a class.
    pub fn sorted_by_label(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..self.len() as u32).collect();
        idx.sort_by_key(|&i| self.labels[i as usize]);
        idx
    }
}

/// Which dataset rows each client holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    clients: Vec<Vec<u32>>,
    /// Shard ids (positions in the tiled sorted sequence divided by the shard
    /// size) owned by each client, in assignment order.
    shards: Vec<Vec<usize>>,
    shards_per_client: usize,
    points_per_client: usize,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn shards_per_client(&self) -> usize {
        self.shards_per_client
    }

    pub fn points_per_client(&self) -> usize {
        self.points_per_client
    }

    pub fn shard_size(&self) -> usize {
        self.points_per_client / self.shards_per_client
    }

    pub fn client(&self, k: usize) -> Result<&[u32]> {
        self.clients
            .get(k)
            .map(Vec::as_slice)
            .ok_or(Error::ClientIndex {
                index: k,
                clients: self.clients.len(),
            })
    }

    pub fn client_shards(&self, k: usize) -> Result<&[usize]> {
        self.shards
            .get(k)
            .map(Vec::as_slice)
            .ok_or(Error::ClientIndex {
                index: k,
                clients: self.clients.len(),
            })
    }

    pub fn clients(&self) -> impl ExactSizeIterator<Item = &[u32]> {
        self.clients.iter().map(Vec::as_slice)
    }
}

/// Two label-sorted shards of 300 points per client (600 points each).
pub fn shard_non_iid(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<ClientPartition> {
    shard_non_iid_with(
        dataset,
        num_clients,
        POINTS_PER_CLIENT,
        SHARDS_PER_CLIENT,
        seed,
    )
}

/// Sort by label, tile the sorted index sequence when the clients need more
/// points than the dataset has, cut it into equal shards, shuffle the shard
/// order and hand each client `shards_per_client` consecutive shuffled shards.
pub fn shard_non_iid_with(
    dataset: &Dataset,
    num_clients: usize,
    points_per_client: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<ClientPartition> {
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    if shards_per_client == 0 || points_per_client % shards_per_client != 0 {
        return Err(Error::Config(format!(
            "{points_per_client} points do not split into {shards_per_client} equal shards"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Data("cannot partition an empty dataset".into()));
    }
    let shard_size = points_per_client / shards_per_client;
    let sorted = dataset.sorted_by_label();
    let needed = num_clients * points_per_client;
    let tiled_len = needed.max(sorted.len());
    let num_shards = tiled_len / shard_size;
    let at = |pos: usize| sorted[pos % sorted.len()];

    let mut order: Vec<usize> = (0..num_shards).collect();
    order.shuffle(&mut rng::stream(seed, 0, PARTITION_TAG));

    let mut clients = Vec::with_capacity(num_clients);
    let mut shards = Vec::with_capacity(num_clients);
    for own in order[..num_clients * shards_per_client].chunks_exact(shards_per_client) {
        let mut indices = Vec::with_capacity(points_per_client);
        for &s in own {
            indices.extend((s * shard_size..(s + 1) * shard_size).map(at));
        }
        clients.push(indices);
        shards.push(own.to_vec());
    }
    Ok(ClientPartition {
        clients,
        shards,
        shards_per_client,
        points_per_client,
    })
}

/// Per-class counts of client `k`'s points.
pub fn label_histogram(
    partition: &ClientPartition,
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<usize>> {
    let mut counts = vec![0; dataset.num_classes()];
    for &i in partition.client(k)? {
        counts[usize::from(dataset.label(i as usize))] += 1;
    }
    Ok(counts)
}
