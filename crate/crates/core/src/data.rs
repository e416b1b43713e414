//! Dataset ingestion: CIFAR-10 binary loader with per-channel normalization,
//! plus seeded synthetic datasets for desk-scale tests. CIFAR files are an
//! optional local input and are never downloaded.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};

/// One CIFAR-10 record: 1 label byte + 3×1024 channel-major pixel bytes.
pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_INPUT_DIM: usize = 3072;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// True when computed over the full training set rather than the subset.
    pub from_full_train_set: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub source: String,
    pub n: usize,
    pub normalization: Option<NormStats>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    /// N×d inputs (d = 3072 channel-major for CIFAR).
    pub inputs: DenseMatrix,
    pub labels: Vec<u8>,
    /// N×C one-hot targets consistent with `labels`.
    pub one_hot: DenseMatrix,
    /// Number of equally sized channels in the input layout.
    pub channels: usize,
    pub meta: DatasetMeta,
}

impl ImageDataset {
    pub fn n(&self) -> usize {
        self.inputs.rows()
    }

    fn from_parts(
        inputs: DenseMatrix,
        labels: Vec<u8>,
        classes: usize,
        channels: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = inputs.rows();
        if labels.len() != n {
            return Err(Error::Dimension {
                context: "labels".into(),
                expected: n,
                actual: labels.len(),
            });
        }
        let mut one_hot = DenseMatrix::zeros(n, classes);
        for (i, &l) in labels.iter().enumerate() {
            if (l as usize) >= classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range at row {i}"
                )));
            }
            one_hot.set(i, l as usize, 1.0);
        }
        Ok(Self {
            inputs,
            labels,
            one_hot,
            channels,
            meta,
        })
    }
}

/// Load the first `count` records of the standard CIFAR-10 binary files,
/// in file order. Pixel bytes are mapped to [0, 1].
pub fn load_cifar10_bin(paths: &[PathBuf], count: usize) -> Result<ImageDataset> {
    let mut inputs = DenseMatrix::zeros(count, CIFAR_INPUT_DIM);
    let mut labels = Vec::with_capacity(count);
    let mut loaded = 0usize;
    for path in paths {
        if loaded == count {
            break;
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Parse {
                offset: bytes.len() as u64,
                message: format!(
                    "{}: file size {} is not a multiple of the {}-byte record",
                    path.display(),
                    bytes.len(),
                    CIFAR_RECORD_BYTES
                ),
            });
        }
        let records = bytes.len() / CIFAR_RECORD_BYTES;
        for r in 0..records {
            if loaded == count {
                break;
            }
            let off = r * CIFAR_RECORD_BYTES;
            let label = bytes[off];
            if label >= CIFAR_CLASSES as u8 {
                return Err(Error::Parse {
                    offset: off as u64,
                    message: format!("{}: label byte {} >= 10", path.display(), label),
                });
            }
            labels.push(label);
            let row = inputs.row_mut(loaded);
            for (j, &b) in bytes[off + 1..off + CIFAR_RECORD_BYTES].iter().enumerate() {
                row[j] = b as f64 / 255.0;
            }
            loaded += 1;
        }
    }
    if loaded < count {
        return Err(Error::Parse {
            offset: (loaded * CIFAR_RECORD_BYTES) as u64,
            message: format!("requested {count} records, files provide only {loaded}"),
        });
    }
    ImageDataset::from_parts(
        inputs,
        labels,
        CIFAR_CLASSES,
        3,
        DatasetMeta {
            source: "cifar10-bin".into(),
            n: count,
            normalization: None,
            seed: None,
        },
    )
}

/// Where normalization statistics come from.
#[derive(Debug, Clone)]
pub enum StatsSource {
    /// Per-channel mean/std over the loaded subset itself.
    SelfStats,
    /// Statistics computed over all records found in these files
    /// (the full training set when all batches are supplied).
    FullTrainSet(Vec<PathBuf>),
}

/// Per-channel mean and std over all records of the given CIFAR binary files.
pub fn cifar_channel_stats(paths: &[PathBuf]) -> Result<(Vec<f64>, Vec<f64>)> {
    let chan = CIFAR_INPUT_DIM / 3;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut n_pixels = [0u64; 3];
    for path in paths {
        let mut file = std::fs::File::open(path)?;
        let mut buf = vec![0u8; CIFAR_RECORD_BYTES];
        loop {
            match file.read_exact(&mut buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            for c in 0..3 {
                for &b in &buf[1 + c * chan..1 + (c + 1) * chan] {
                    let v = b as f64 / 255.0;
                    sum[c] += v;
                    sum_sq[c] += v * v;
                    n_pixels[c] += 1;
                }
            }
        }
    }
    let mut means = vec![0.0; 3];
    let mut stds = vec![0.0; 3];
    for c in 0..3 {
        if n_pixels[c] == 0 {
            return Err(Error::Parse {
                offset: 0,
                message: "no records found for channel statistics".into(),
            });
        }
        let n = n_pixels[c] as f64;
        means[c] = sum[c] / n;
        stds[c] = (sum_sq[c] / n - means[c] * means[c]).max(0.0).sqrt();
    }
    Ok((means, stds))
}

/// Per-channel normalization: (v − mean_c) / std_c. The stats provenance is
/// recorded in the returned dataset's metadata.
pub fn normalize_per_channel(ds: &ImageDataset, source: StatsSource) -> Result<ImageDataset> {
    let d = ds.inputs.cols();
    let channels = ds.channels;
    if !d.is_multiple_of(channels) {
        return Err(Error::InvalidArgument(format!(
            "input dim {d} not divisible into {channels} channels"
        )));
    }
    let chan = d / channels;
    let (means, stds, from_full) = match source {
        StatsSource::SelfStats => {
            let n = ds.n();
            let mut means = vec![0.0; channels];
            let mut stds = vec![0.0; channels];
            for c in 0..channels {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for i in 0..n {
                    for &v in &ds.inputs.row(i)[c * chan..(c + 1) * chan] {
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let count = (n * chan) as f64;
                means[c] = sum / count;
                stds[c] = (sum_sq / count - means[c] * means[c]).max(0.0).sqrt();
            }
            (means, stds, false)
        }
        StatsSource::FullTrainSet(paths) => {
            if channels != 3 {
                return Err(Error::InvalidArgument(
                    "full-train-set stats require CIFAR channel layout".into(),
                ));
            }
            let (m, s) = cifar_channel_stats(&paths)?;
            (m, s, true)
        }
    };
    for (c, s) in stds.iter().enumerate() {
        if *s <= 0.0 {
            return Err(Error::ZeroStd { channel: c });
        }
    }
    let mut inputs = ds.inputs.clone();
    for i in 0..ds.n() {
        let row = inputs.row_mut(i);
        for c in 0..channels {
            for v in &mut row[c * chan..(c + 1) * chan] {
                *v = (*v - means[c]) / stds[c];
            }
        }
    }
    let mut meta = ds.meta.clone();
    meta.normalization = Some(NormStats {
        means,
        stds,
        from_full_train_set: from_full,
    });
    Ok(ImageDataset {
        inputs,
        labels: ds.labels.clone(),
        one_hot: ds.one_hot.clone(),
        channels,
        meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    RandomLabels,
    Teacher,
}

/// Fixed random linear teacher used by `SyntheticMode::Teacher`; regenerable
/// from the seed for definitional checks.
pub fn teacher_matrix(d: usize, c: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7eac_4e12));
    let mut m = DenseMatrix::zeros(d, c);
    for v in m.as_mut_slice().iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    m
}

/// Seeded synthetic dataset: i.i.d. standard-normal inputs; labels either
/// uniform or the argmax of a fixed random linear teacher.
pub fn synthetic_dataset(
    n: usize,
    d: usize,
    c: usize,
    seed: u64,
    mode: SyntheticMode,
) -> Result<ImageDataset> {
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::InvalidArgument("n, d, c must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = DenseMatrix::zeros(n, d);
    for v in inputs.as_mut_slice().iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let labels: Vec<u8> = match mode {
        SyntheticMode::RandomLabels => (0..n).map(|_| rng.gen_range(0..c) as u8).collect(),
        SyntheticMode::Teacher => {
            let teacher = teacher_matrix(d, c, seed);
            (0..n)
                .map(|i| {
                    let scores = {
                        let mut s = vec![0.0; c];
                        for (k, &x) in inputs.row(i).iter().enumerate() {
                            for (j, sj) in s.iter_mut().enumerate() {
                                *sj += x * teacher.get(k, j);
                            }
                        }
                        s
                    };
                    let mut best = 0;
                    for j in 1..c {
                        if scores[j] > scores[best] {
                            best = j;
                        }
                    }
                    best as u8
                })
                .collect()
        }
    };
    ImageDataset::from_parts(
        inputs,
        labels,
        c,
        1,
        DatasetMeta {
            source: format!("synthetic-{mode:?}"),
            n,
            normalization: None,
            seed: Some(seed),
        },
    )
}

/// Write a dataset in the CIFAR binary layout (pixels quantized back to
/// bytes); used by the loader round-trip check.
pub fn write_cifar10_bin(ds: &ImageDataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(ds.n() * CIFAR_RECORD_BYTES);
    if ds.inputs.cols() != CIFAR_INPUT_DIM {
        return Err(Error::InvalidArgument(
            "CIFAR layout requires 3072 input columns".into(),
        ));
    }
    for i in 0..ds.n() {
        bytes.push(ds.labels[i]);
        for &v in ds.inputs.row(i) {
            bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
