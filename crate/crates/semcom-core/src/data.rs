//! Dataset ingestion and per-user quadrant partitioning.
//!
//! Reads the CIFAR-10 binary layout: files of 3073-byte records, one label
//! byte followed by 3072 pixel bytes (red, green, blue planes, row-major
//! 32x32). Pixels are normalized to `[0, 1]` by dividing the 8-bit values by
//! 255. The library never touches the network; pointing it at a directory is
//! the caller's job (the CLI has a `fetch-data` subcommand).
//!
//! Each image is split into four non-overlapping 16x16x3 quadrant
//! observations, one per user, in row-major quadrant order: top-left,
//! top-right, bottom-left, bottom-right. `reassemble` inverts the split
//! bit-exactly.

use crate::error::{Error, Result};
use crate::objective::Images;
use crate::rng;
use ndarray::Array4;
use std::path::{Path, PathBuf};

/// Environment variable overriding the configured dataset root.
pub const DATASET_DIR_ENV: &str = "SEMCOM_DATASET_DIR";

const RECORD_BYTES: usize = 3073;
const PIXELS_PER_IMAGE: usize = 3072;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILES: [&str; 1] = ["test_batch.bin"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!(
                "unknown split {other:?} (expected train or test)"
            ))),
        }
    }

    fn files(&self) -> &'static [&'static str] {
        match self {
            Split::Train => &TRAIN_FILES,
            Split::Test => &TEST_FILES,
        }
    }
}

/// A batch of normalized images with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    /// `[batch, 3, 32, 32]`, every value in `[0, 1]`.
    pub pixels: Images,
    /// One class label in `{0, ..., 9}` per image.
    pub labels: Vec<u8>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.dim().0 != self.labels.len() {
            return Err(Error::Argument(format!(
                "{} labels for {} images",
                self.labels.len(),
                self.pixels.dim().0
            )));
        }
        if self.pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Argument("pixel outside [0, 1]".into()));
        }
        if self.labels.iter().any(|&l| l > 9) {
            return Err(Error::Argument("label outside {0,...,9}".into()));
        }
        Ok(())
    }
}

/// One user's view: a 16x16x3 quadrant of every image in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UserObservation {
    /// `[batch, 3, 16, 16]`, values in `[0, 1]`.
    pub pixels: Array4<f64>,
    /// 1-based user index; quadrants are numbered row-major TL, TR, BL, BR.
    pub user_index: usize,
}

/// In-memory dataset split, kept as raw bytes and converted per batch.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Load a split from `source_path`, which may be the directory holding
    /// the `.bin` files or its parent (the standard extracted archive keeps
    /// them under `cifar-10-batches-bin/`).
    pub fn load(source_path: &Path, split: Split) -> Result<Self> {
        let root = resolve_root(source_path);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for name in split.files() {
            let file = root.join(name);
            let bytes = std::fs::read(&file).map_err(|e| Error::Ingestion {
                file: file.clone(),
                reason: format!("cannot read: {e}"),
            })?;
            if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
                return Err(Error::Ingestion {
                    file: file.clone(),
                    reason: format!(
                        "size {} is not a positive multiple of the {RECORD_BYTES}-byte record",
                        bytes.len()
                    ),
                });
            }
            for record in bytes.chunks_exact(RECORD_BYTES) {
                let label = record[0];
                if label > 9 {
                    return Err(Error::Ingestion {
                        file: file.clone(),
                        reason: format!("label byte {label} outside 0..=9"),
                    });
                }
                labels.push(label);
                pixels.extend_from_slice(&record[1..]);
            }
        }
        Ok(Dataset { pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Materialize the images at `indices` as a normalized batch.
    pub fn gather(&self, indices: &[usize]) -> ImageBatch {
        let n = indices.len();
        let mut pixels = Array4::<f64>::zeros((n, 3, 32, 32));
        {
            let out = pixels.as_slice_mut().unwrap();
            for (bi, &idx) in indices.iter().enumerate() {
                let src = &self.pixels[idx * PIXELS_PER_IMAGE..(idx + 1) * PIXELS_PER_IMAGE];
                let dst = &mut out[bi * PIXELS_PER_IMAGE..(bi + 1) * PIXELS_PER_IMAGE];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s as f64 / 255.0;
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        ImageBatch { pixels, labels }
    }

    /// Iterate the split in batches. With a shuffle seed the order is a pure
    /// function of that seed; without one it is the file order.
    pub fn batches(&self, batch_size: usize, shuffle_seed: Option<u64>) -> BatchStream<'_> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            rng::shuffle_indices(&mut rng::stream(seed, rng::STREAM_SHUFFLE), &mut order);
        }
        BatchStream {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        }
    }

    /// Mean image of the split (used by the PSNR-floor oracle).
    pub fn mean_image(&self) -> Images {
        let mut acc = vec![0.0f64; PIXELS_PER_IMAGE];
        for img in self.pixels.chunks_exact(PIXELS_PER_IMAGE) {
            for (a, &p) in acc.iter_mut().zip(img) {
                *a += p as f64 / 255.0;
            }
        }
        let n = self.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Array4::from_shape_vec((1, 3, 32, 32), acc).unwrap()
    }
}

fn resolve_root(path: &Path) -> PathBuf {
    let nested = path.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Batched, optionally shuffled view over a [`Dataset`]. The final batch may
/// be smaller than `batch_size`.
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchStream<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Split a batch of full images into `n_users` quadrant observations in
/// row-major quadrant order (TL, TR, BL, BR). Only `n_users = 4` is
/// supported; the parameter exists so future layouts fail loudly instead of
/// silently truncating.
pub fn partition_quadrants(batch: &ImageBatch, n_users: usize) -> Result<Vec<UserObservation>> {
    if n_users != 4 {
        return Err(Error::UnsupportedConfiguration(format!(
            "quadrant partitioning supports exactly 4 users, got {n_users}"
        )));
    }
    let (_, _, h, w) = batch.pixels.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Argument(format!(
            "image {h}x{w} not divisible into quadrants"
        )));
    }
    let (hh, hw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(4);
    for user in 0..4 {
        let (row, col) = (user / 2, user % 2);
        let view = batch.pixels.slice(ndarray::s![
            ..,
            ..,
            row * hh..(row + 1) * hh,
            col * hw..(col + 1) * hw
        ]);
        out.push(UserObservation {
            pixels: view.to_owned(),
            user_index: user + 1,
        });
    }
    Ok(out)
}

/// Inverse of [`partition_quadrants`]: reassemble the full image tensor.
pub fn reassemble(observations: &[UserObservation]) -> Result<Images> {
    if observations.len() != 4 {
        return Err(Error::Argument(format!(
            "reassemble expects exactly 4 observations, got {}",
            observations.len()
        )));
    }
    let mut seen = [false; 4];
    for obs in observations {
        if obs.user_index < 1 || obs.user_index > 4 {
            return Err(Error::Argument(format!(
                "user index {} outside 1..=4",
                obs.user_index
            )));
        }
        if seen[obs.user_index - 1] {
            return Err(Error::Argument(format!(
                "duplicate user index {}",
                obs.user_index
            )));
        }
        seen[obs.user_index - 1] = true;
    }
    let (n, c, hh, hw) = observations[0].pixels.dim();
    for obs in observations {
        if obs.pixels.dim() != (n, c, hh, hw) {
            return Err(Error::Argument("observation shapes differ".into()));
        }
    }
    let mut full = Array4::<f64>::zeros((n, c, hh * 2, hw * 2));
    for obs in observations {
        let q = obs.user_index - 1;
        let (row, col) = (q / 2, q % 2);
        full.slice_mut(ndarray::s![
            ..,
            ..,
            row * hh..(row + 1) * hh,
            col * hw..(col + 1) * hw
        ])
        .assign(&obs.pixels);
    }
    Ok(full)
}

/// Dataset root resolution: explicit argument, else the environment
/// override, else `None`.
pub fn resolve_dataset_root(configured: Option<&Path>) -> Option<PathBuf> {
    if let Ok(env) = std::env::var(DATASET_DIR_ENV) {
        if !env.is_empty() {
            return Some(PathBuf::from(env));
        }
    }
    configured.map(|p| p.to_path_buf())
}

pub mod synthetic {
    //! Fixture generator: writes a small class-structured dataset in the
    //! published binary layout so the full pipeline can run without the real
    //! archive (tests, smoke runs, demos).

    use super::*;
    use rand::Rng;

    /// Deterministic class-dependent image: a sinusoidal pattern whose
    /// frequency and phase depend on the label, plus per-image jitter.
    fn render(
        label: u8,
        jitter: &[f64; 2],
        noise: &mut impl FnMut() -> f64,
    ) -> [u8; PIXELS_PER_IMAGE] {
        let mut out = [0u8; PIXELS_PER_IMAGE];
        let freq = 1.0 + label as f64 * 0.5;
        for c in 0..3 {
            let phase = label as f64 * 0.7 + c as f64 * 2.1 + jitter[0];
            for y in 0..32 {
                for x in 0..32 {
                    let t = (x as f64 + 2.0 * y as f64) / 32.0;
                    let v = 0.5
                        + 0.35 * (freq * std::f64::consts::TAU * t + phase).sin()
                        + 0.08 * jitter[1]
                        + 0.05 * noise();
                    let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    out[c * 1024 + y * 32 + x] = q;
                }
            }
        }
        out
    }

    /// Write `train_records` training images (split over the five standard
    /// files, each non-empty) plus `test_records` test images under `dir`.
    pub fn write_dataset(
        dir: &Path,
        train_records: usize,
        test_records: usize,
        seed: u64,
    ) -> Result<()> {
        if train_records < TRAIN_FILES.len() || test_records == 0 {
            return Err(Error::Argument(format!(
                "need at least {} train and 1 test record to fill the standard files",
                TRAIN_FILES.len()
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rng = rng::stream(seed, rng::STREAM_ORACLE);
        let mut write_file = |name: &str, count: usize| -> Result<()> {
            let mut bytes = Vec::with_capacity(count * RECORD_BYTES);
            for _ in 0..count {
                let label = rng.random_range(0..10u8);
                let jitter = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
                let mut noise = || rng.random::<f64>() - 0.5;
                bytes.push(label);
                bytes.extend_from_slice(&render(label, &jitter, &mut noise));
            }
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path.clone(), e))
        };
        let base = train_records / TRAIN_FILES.len();
        let extra = train_records % TRAIN_FILES.len();
        for (i, name) in TRAIN_FILES.iter().enumerate() {
            write_file(name, base + usize::from(i < extra))?;
        }
        write_file(TEST_FILES[0], test_records)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_ORACLE};
    use rand::Rng;

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("semcom-data-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn random_batch(n: usize, seed: u64) -> ImageBatch {
        let mut rng = stream(seed, STREAM_ORACLE);
        ImageBatch {
            pixels: Array4::from_shape_fn((n, 3, 32, 32), |_| rng.random::<f64>()),
            labels: (0..n).map(|_| rng.random_range(0..10u8)).collect(),
        }
    }

    #[test]
    fn normalization_endpoints() {
        let dir = tempdir("endpoints");
        // One record: label 7, pixels alternating 0 and 255.
        let mut record = vec![7u8];
        for i in 0..PIXELS_PER_IMAGE {
            record.push(if i % 2 == 0 { 255 } else { 0 });
        }
        std::fs::write(dir.join("test_batch.bin"), &record).unwrap();
        let ds = Dataset::load(&dir, Split::Test).unwrap();
        let batch = ds.gather(&[0]);
        batch.validate().unwrap();
        assert_eq!(batch.labels, vec![7]);
        let flat = batch.pixels.as_slice().unwrap();
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[1], 0.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_error_names_the_file() {
        let dir = tempdir("missing");
        let err = Dataset::load(&dir, Split::Train).unwrap_err();
        match err {
            Error::Ingestion { file, .. } => {
                assert!(file.to_string_lossy().contains("data_batch_1.bin"))
            }
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempdir("corrupt");
        std::fs::write(dir.join("test_batch.bin"), vec![0u8; RECORD_BYTES - 1]).unwrap();
        assert!(matches!(
            Dataset::load(&dir, Split::Test),
            Err(Error::Ingestion { .. })
        ));
        let mut bad_label = vec![11u8];
        bad_label.extend_from_slice(&[0u8; PIXELS_PER_IMAGE]);
        std::fs::write(dir.join("test_batch.bin"), &bad_label).unwrap();
        assert!(matches!(
            Dataset::load(&dir, Split::Test),
            Err(Error::Ingestion { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_split_is_an_argument_error() {
        assert!(matches!(
            Split::parse("validation"),
            Err(Error::Argument(_))
        ));
        assert_eq!(Split::parse("train").unwrap(), Split::Train);
        assert_eq!(Split::parse("test").unwrap(), Split::Test);
    }

    #[test]
    fn synthetic_dataset_round_trips_with_expected_counts() {
        let dir = tempdir("synth");
        synthetic::write_dataset(&dir, 100, 40, 1).unwrap();
        let train = Dataset::load(&dir, Split::Train).unwrap();
        let test = Dataset::load(&dir, Split::Test).unwrap();
        assert_eq!(train.len(), 100);
        assert_eq!(test.len(), 40);
        let batch = train.gather(&(0..train.len()).collect::<Vec<_>>());
        batch.validate().unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn fixed_seed_gives_identical_batch_sequences() {
        let dir = tempdir("shuffle");
        synthetic::write_dataset(&dir, 64, 8, 2).unwrap();
        let ds = Dataset::load(&dir, Split::Train).unwrap();
        let a: Vec<ImageBatch> = ds.batches(10, Some(99)).collect();
        let b: Vec<ImageBatch> = ds.batches(10, Some(99)).collect();
        assert_eq!(a, b);
        let c: Vec<ImageBatch> = ds.batches(10, Some(100)).collect();
        assert_ne!(a, c);
        // last partial batch present
        assert_eq!(a.len(), 7);
        assert_eq!(a.last().unwrap().len(), 4);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn quadrants_are_16x16_and_partition_is_exact() {
        let batch = random_batch(3, 5);
        let obs = partition_quadrants(&batch, 4).unwrap();
        assert_eq!(obs.len(), 4);
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(o.user_index, i + 1);
            assert_eq!(o.pixels.dim(), (3, 3, 16, 16));
        }
        // Block structure: constant-quadrant image maps to constant views.
        let mut pixels = Array4::<f64>::zeros((1, 3, 32, 32));
        for q in 0..4usize {
            let (r, c) = (q / 2, q % 2);
            pixels
                .slice_mut(ndarray::s![
                    ..,
                    ..,
                    r * 16..(r + 1) * 16,
                    c * 16..(c + 1) * 16
                ])
                .fill(q as f64 * 0.25);
        }
        let batch = ImageBatch {
            pixels,
            labels: vec![0],
        };
        let obs = partition_quadrants(&batch, 4).unwrap();
        for (q, o) in obs.iter().enumerate() {
            assert!(o.pixels.iter().all(|&v| v == q as f64 * 0.25));
        }
    }

    #[test]
    fn partition_rejects_other_user_counts() {
        let batch = random_batch(1, 6);
        for n in [1usize, 2, 3, 5, 16] {
            assert!(matches!(
                partition_quadrants(&batch, n),
                Err(Error::UnsupportedConfiguration(_))
            ));
        }
    }

    #[test]
    fn reassemble_inverts_partition_bit_exactly() {
        let batch = random_batch(4, 7);
        let obs = partition_quadrants(&batch, 4).unwrap();
        let full = reassemble(&obs).unwrap();
        assert_eq!(full, batch.pixels);

        // and partition(reassemble(obs)) == obs
        let again = partition_quadrants(
            &ImageBatch {
                pixels: full,
                labels: batch.labels.clone(),
            },
            4,
        )
        .unwrap();
        assert_eq!(again, obs);
    }

    #[test]
    fn reassemble_of_zero_observations_is_zero() {
        let zeros: Vec<UserObservation> = (1..=4)
            .map(|u| UserObservation {
                pixels: Array4::zeros((2, 3, 16, 16)),
                user_index: u,
            })
            .collect();
        let full = reassemble(&zeros).unwrap();
        assert!(full.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swapping_user_indices_swaps_quadrants() {
        let batch = random_batch(1, 8);
        let mut obs = partition_quadrants(&batch, 4).unwrap();
        obs[0].user_index = 2;
        obs[1].user_index = 1;
        let swapped = reassemble(&obs).unwrap();
        // top-left of swapped is the original top-right
        assert_eq!(
            swapped.slice(ndarray::s![.., .., ..16, ..16]),
            batch.pixels.slice(ndarray::s![.., .., ..16, 16..])
        );
        assert_eq!(
            swapped.slice(ndarray::s![.., .., ..16, 16..]),
            batch.pixels.slice(ndarray::s![.., .., ..16, ..16])
        );
        // bottom half untouched
        assert_eq!(
            swapped.slice(ndarray::s![.., .., 16.., ..]),
            batch.pixels.slice(ndarray::s![.., .., 16.., ..])
        );
    }

    #[test]
    fn reassemble_rejects_duplicate_or_missing_indices() {
        let batch = random_batch(1, 9);
        let mut obs = partition_quadrants(&batch, 4).unwrap();
        obs[3].user_index = 1;
        assert!(matches!(reassemble(&obs), Err(Error::Argument(_))));
        let three = &obs[..3];
        assert!(matches!(reassemble(three), Err(Error::Argument(_))));
    }

    #[test]
    fn real_dataset_counts_if_available() {
        // Spot check against the published split sizes; runs only when the
        // real archive is present.
        let Some(root) = resolve_dataset_root(None) else {
            eprintln!("skipping: {DATASET_DIR_ENV} not set");
            return;
        };
        if Dataset::load(&root, Split::Test).is_err() {
            eprintln!("skipping: no dataset at {root:?}");
            return;
        }
        let train = Dataset::load(&root, Split::Train).unwrap();
        let test = Dataset::load(&root, Split::Test).unwrap();
        assert_eq!(train.len(), 50_000);
        assert_eq!(test.len(), 10_000);
    }
}
