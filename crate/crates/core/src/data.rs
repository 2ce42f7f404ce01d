//! IDX dataset ingestion and non-IID Dirichlet sharding.

use crate::error::{Error, Result};
use crate::rng::{stream, StreamKind};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use std::io::Read;
use std::path::Path;

pub const IMAGE_SIDE: usize = 28;
pub const CLASSES: usize = 10;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images as `count x 28 x 28` rows of `[0, 1]` floats plus class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, idx: usize) -> &[f32] {
        let px = IMAGE_SIDE * IMAGE_SIDE;
        &self.images[idx * px..(idx + 1) * px]
    }

    /// Keep the first `n` samples (whole set when `n` is 0 or past the end).
    pub fn truncate(&mut self, n: usize) {
        if n == 0 || n >= self.len() {
            return;
        }
        self.images.truncate(n * IMAGE_SIDE * IMAGE_SIDE);
        self.labels.truncate(n);
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    // Gzip magic: 0x1f 0x8b.
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Parse(format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("truncated header reading {what}")))
}

/// Parse an IDX image/label pair (optionally gzip-compressed) into a dataset.
/// Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Parse(format!("bad image magic 0x{magic:08x}")));
    }
    let count = be_u32(&img, 4, "image count")? as usize;
    let rows = be_u32(&img, 8, "rows")? as usize;
    let cols = be_u32(&img, 12, "cols")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Parse(format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let body = &img[16..];
    if body.len() != count * rows * cols {
        return Err(Error::Parse(format!(
            "image payload holds {} bytes, header promises {}",
            body.len(),
            count * rows * cols
        )));
    }

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Parse(format!("bad label magic 0x{magic:08x}")));
    }
    let label_count = be_u32(&lab, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Parse(format!("{count} images but {label_count} labels")));
    }
    let labels = lab[8..].to_vec();
    if labels.len() != count {
        return Err(Error::Parse("truncated label payload".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Parse(format!("label {bad} out of range")));
    }

    Ok(Dataset {
        images: body.iter().map(|&b| b as f32 / 255.0).collect(),
        labels,
        split,
    })
}

/// Per-pixel standardization `(x - mean) / std`.
pub fn standardize(dataset: &Dataset, mean: f32, std: f32) -> Result<Dataset> {
    if !(std > 0.0) {
        return Err(Error::InvalidArgument("std must be > 0".into()));
    }
    let mut out = dataset.clone();
    for v in out.images.iter_mut() {
        *v = (*v - mean) / std;
    }
    Ok(out)
}

/// One device's slice of the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub device: usize,
    pub indices: Vec<usize>,
}

/// Split a label vector across `devices` shards with per-class proportions
/// drawn from `Dir(alpha * 1)`.
///
/// For each class the samples are shuffled, apportioned by the Dirichlet
/// draw with largest-remainder rounding (so per-class totals are conserved
/// exactly), and handed out in device order. Deterministic given the seed;
/// a device may legitimately end up with an empty shard at extreme `alpha`.
pub fn dirichlet_partition_labels(
    labels: &[u8],
    devices: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Shard>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot partition an empty dataset".into()));
    }
    if devices == 0 {
        return Err(Error::InvalidArgument("need at least one device".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    let mut rng = stream(seed, StreamKind::Partition);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("alpha rejected: {e}")))?;

    let mut shards: Vec<Shard> = (0..devices).map(|d| Shard { device: d, indices: vec![] }).collect();
    for class in 0..CLASSES {
        let mut members: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &l)| l as usize == class).map(|(i, _)| i).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);

        // Dirichlet proportions via normalized gamma draws.
        let mut props: Vec<f64> = (0..devices).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            // All-zero draws can occur at tiny alpha from underflow; fall back
            // to a single winner so counts stay conserved.
            props.iter_mut().for_each(|p| *p = 0.0);
            props[rng.random_range(0..devices)] = 1.0;
        } else {
            props.iter_mut().for_each(|p| *p /= total);
        }

        // Largest-remainder rounding of `props * n`.
        let n = members.len();
        let ideal: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
        let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
        let leftover = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..devices).collect();
        order.sort_by(|&a, &b| {
            let fa = ideal[a] - ideal[a].floor();
            let fb = ideal[b] - ideal[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        // At most `devices - 1` samples remain after flooring.
        for &d in order.iter().take(leftover) {
            counts[d] += 1;
        }

        let mut cursor = 0;
        for (d, &c) in counts.iter().enumerate() {
            shards[d].indices.extend_from_slice(&members[cursor..cursor + c]);
            cursor += c;
        }
    }
    for shard in shards.iter_mut() {
        shard.indices.sort_unstable();
    }
    Ok(shards)
}

/// [`dirichlet_partition_labels`] over a dataset's labels.
pub fn dirichlet_partition(
    dataset: &Dataset,
    devices: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Shard>> {
    dirichlet_partition_labels(&dataset.labels, devices, alpha, seed)
}

/// Shannon entropy (nats) of one shard's label distribution.
pub fn label_entropy(labels: &[u8], shard: &Shard) -> f64 {
    let mut counts = [0usize; CLASSES];
    for &i in &shard.indices {
        counts[labels[i] as usize] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}
