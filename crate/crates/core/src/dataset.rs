//! Image datasets: the flat-records container, CIFAR-10 binary batches, and
//! index views used for training.
//!
//! Flat-records layout (little-endian):
//!
//! ```text
//! "LGDS"  u16 version=1  u16 class_count  u32 record_count
//! u16 height  u16 width  u8 channels
//! class_count × (u16 byte length + UTF-8 name)
//! record_count × (u8 label + channels·height·width pixel bytes)
//! ```
//!
//! Pixels are stored channel-planar (all of channel 0 row by row, then
//! channel 1, ...), the same order CIFAR-10 uses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const FLAT_MAGIC: &[u8; 4] = b"LGDS";
pub const FLAT_VERSION: u16 = 1;
pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    FlatRecords,
    Cifar10Binary,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat-records" | "flat" => Ok(DatasetFormat::FlatRecords),
            "cifar10-binary" | "cifar10" => Ok(DatasetFormat::Cifar10Binary),
            _ => Err(Error::Config(format!(
                "unknown dataset format `{s}` (expected flat-records or cifar10-binary)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub class_names: Vec<String>,
    /// `(channels, height, width)`
    pub image_shape: [usize; 3],
    pub format_version: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageDataset {
    pub header: DatasetHeader,
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(class_names: Vec<String>, image_shape: [usize; 3]) -> Self {
        ImageDataset {
            header: DatasetHeader {
                class_names,
                image_shape,
                format_version: FLAT_VERSION,
            },
            labels: Vec::new(),
            pixels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.header.class_names.len()
    }

    pub fn image_len(&self) -> usize {
        self.header.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, label: u8, pixels: &[u8]) {
        assert_eq!(pixels.len(), self.image_len());
        assert!((label as usize) < self.class_count());
        self.labels.push(label);
        self.pixels.extend_from_slice(pixels);
    }

    /// Record indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// 2×2 average downsampling of every image.
    pub fn downsample2(&self) -> ImageDataset {
        let [c, h, w] = self.header.image_shape;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = ImageDataset::new(self.header.class_names.clone(), [c, oh, ow]);
        let mut buf = vec![0u8; c * oh * ow];
        for i in 0..self.len() {
            let img = self.image(i);
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let at = |dy: usize, dx: usize| img[(ch * h + 2 * y + dy) * w + 2 * x + dx] as u32;
                        let s = at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1);
                        buf[(ch * oh + y) * ow + x] = ((s + 2) / 4) as u8;
                    }
                }
            }
            out.push(self.labels[i], &buf);
        }
        out
    }

    /// Keeps at most `per_class` records of each class, in file order.
    pub fn truncate_per_class(&self, per_class: usize) -> ImageDataset {
        let mut out = ImageDataset::new(self.header.class_names.clone(), self.header.image_shape);
        let mut seen = vec![0usize; self.class_count()];
        for i in 0..self.len() {
            let l = self.labels[i] as usize;
            if seen[l] < per_class {
                seen[l] += 1;
                out.push(self.labels[i], self.image(i));
            }
        }
        out
    }

    pub fn to_flat_bytes(&self) -> Vec<u8> {
        let [c, h, w] = self.header.image_shape;
        let mut out = Vec::with_capacity(20 + self.pixels.len() + self.len());
        out.extend_from_slice(FLAT_MAGIC);
        out.extend_from_slice(&FLAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.class_count() as u16).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(h as u16).to_le_bytes());
        out.extend_from_slice(&(w as u16).to_le_bytes());
        out.push(c as u8);
        for name in &self.header.class_names {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for i in 0..self.len() {
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }

    pub fn from_flat_bytes(bytes: &[u8]) -> Result<ImageDataset> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != FLAT_MAGIC {
            return Err(Error::DatasetFormat {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"LGDS\""),
            });
        }
        let version = r.u16()?;
        if version != FLAT_VERSION {
            return Err(Error::DatasetFormat {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let classes = r.u16()? as usize;
        let records = r.u32()? as usize;
        let h = r.u16()? as usize;
        let w = r.u16()? as usize;
        let c = r.u8()? as usize;
        let mut names = Vec::with_capacity(classes);
        for _ in 0..classes {
            let at = r.pos;
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw).map_err(|e| Error::DatasetFormat {
                offset: at as u64,
                reason: format!("class name is not UTF-8: {e}"),
            })?;
            names.push(name.to_string());
        }
        let image_len = c * h * w;
        let record_len = 1 + image_len;
        let expected = r.pos as u64 + (records as u64) * record_len as u64;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len() as u64,
            });
        }
        if (bytes.len() as u64) > expected {
            return Err(Error::DatasetFormat {
                offset: expected,
                reason: format!("{} trailing bytes after the last record", bytes.len() as u64 - expected),
            });
        }
        let mut ds = ImageDataset::new(names, [c, h, w]);
        ds.labels.reserve_exact(records);
        ds.pixels.reserve_exact(records * image_len);
        for _ in 0..records {
            let at = r.pos;
            let label = r.u8()?;
            if label as usize >= classes {
                return Err(Error::DatasetFormat {
                    offset: at as u64,
                    reason: format!("label {label} out of range for {classes} classes"),
                });
            }
            ds.labels.push(label);
            ds.pixels.extend_from_slice(r.take(image_len)?);
        }
        Ok(ds)
    }

    /// Parses concatenated CIFAR-10 binary records (1 label byte + 3072
    /// channel-planar pixel bytes each).
    pub fn from_cifar10_bytes(bytes: &[u8]) -> Result<ImageDataset> {
        if bytes.len() % CIFAR10_RECORD != 0 {
            let whole = bytes.len() / CIFAR10_RECORD;
            return Err(Error::Truncated {
                expected: ((whole + 1) * CIFAR10_RECORD) as u64,
                actual: bytes.len() as u64,
            });
        }
        let names = CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect();
        let mut ds = ImageDataset::new(names, [3, 32, 32]);
        for (i, rec) in bytes.chunks(CIFAR10_RECORD).enumerate() {
            if rec[0] as usize >= CIFAR10_CLASSES.len() {
                return Err(Error::DatasetFormat {
                    offset: (i * CIFAR10_RECORD) as u64,
                    reason: format!("label {} out of range for 10 classes", rec[0]),
                });
            }
            ds.push(rec[0], &rec[1..]);
        }
        Ok(ds)
    }

    pub fn save_flat(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, &self.to_flat_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a dataset. A CIFAR-10 path may be a single batch file or a
/// directory of `data_batch_*.bin` / `test_batch.bin` files.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<ImageDataset> {
    match format {
        DatasetFormat::FlatRecords => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            ImageDataset::from_flat_bytes(&bytes)
        }
        DatasetFormat::Cifar10Binary => {
            if path.is_dir() {
                let mut files: Vec<_> = std::fs::read_dir(path)
                    .map_err(|e| Error::io(path, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "bin") && p.file_name().is_some_and(|n| n.to_string_lossy().contains("batch")))
                    .collect();
                files.sort();
                let mut all = Vec::new();
                for f in &files {
                    all.extend(std::fs::read(f).map_err(|e| Error::io(f, e))?);
                }
                ImageDataset::from_cifar10_bytes(&all)
            } else {
                let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                ImageDataset::from_cifar10_bytes(&bytes)
            }
        }
    }
}

/// Maps a stored byte to `[-1, 1]`.
pub fn pixel_value(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// A labelled subset of a dataset with task-local labels.
#[derive(Clone, Debug)]
pub struct SampleSet<'a> {
    pub dataset: &'a ImageDataset,
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<'a> SampleSet<'a> {
    /// Samples of `classes` (global ids) relabelled to their position in
    /// `classes`; `pick` selects which records of each class are used.
    pub fn from_classes(
        dataset: &'a ImageDataset,
        classes: &[usize],
        per_class: &[Vec<usize>],
    ) -> SampleSet<'a> {
        let mut indices = Vec::new();
        let mut labels = Vec::new();
        for (local, recs) in per_class.iter().enumerate() {
            debug_assert!(recs.iter().all(|&r| dataset.labels[r] as usize == classes[local]));
            for &r in recs {
                indices.push(r);
                labels.push(local);
            }
        }
        SampleSet {
            dataset,
            indices,
            labels,
            classes: classes.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Builds a float batch from positions in this set; pixels go through
    /// `pixel_value`.
    pub fn batch(&self, positions: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let [c, h, w] = self.dataset.header.image_shape;
        let len = c * h * w;
        let mut data = Vec::with_capacity(positions.len() * len);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend(self.dataset.image(self.indices[p]).iter().map(|&v| pixel_value(v)));
            labels.push(self.labels[p]);
        }
        (Tensor::from_vec([positions.len(), c, h, w], data), labels)
    }
}
