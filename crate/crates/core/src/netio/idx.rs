//! IDX image and label files (MNIST layout).

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len().checked_div(self.rows * self.cols).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Images with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::new(load_idx_images(images)?, load_idx_labels(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.images.pixels.truncate(n * self.images.rows * self.images.cols);
        self
    }

    /// Seeded stand-in data: each class lights a distinct horizontal band on
    /// top of uniform noise.
    pub fn synthetic(n: usize, rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Vec::with_capacity(n * rows * cols);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label: u8 = rng.random_range(0..10);
            let band = usize::from(label) * rows / 10;
            for y in 0..rows {
                for _ in 0..cols {
                    let noise: u8 = rng.random_range(0..128);
                    let lit = y >= band && y < band + rows.div_ceil(10);
                    pixels.push(if lit { noise + 127 } else { noise });
                }
            }
            labels.push(label);
        }
        Self {
            images: IdxImages { rows, cols, pixels },
            labels,
        }
    }
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let at = self.cur.position();
        self.cur
            .read_u32::<BigEndian>()
            .map_err(|_| format_err(self.path, at, format!("truncated header: missing {what}")))
    }

    fn payload(&mut self, len: usize) -> Result<Vec<u8>> {
        let at = self.cur.position();
        let mut out = vec![0; len];
        self.cur.read_exact(&mut out).map_err(|_| {
            let have = self.cur.get_ref().len() as u64 - at;
            format_err(self.path, at + have, format!("truncated payload: expected {len} bytes, found {have}"))
        })?;
        let end = self.cur.position();
        if end != self.cur.get_ref().len() as u64 {
            return Err(format_err(self.path, end, "trailing bytes after payload"));
        }
        Ok(out)
    }
}

fn check_magic(r: &mut Reader<'_>, expected: u32) -> Result<()> {
    let magic = r.u32("magic")?;
    if magic != expected {
        return Err(format_err(r.path, 0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    check_magic(&mut r, IMAGES_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(format_err(path, 8, "image dimensions must be positive"));
    }
    let pixels = r.payload(count * rows * cols)?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    check_magic(&mut r, LABELS_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.payload(count)?;
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(format_err(path, 8 + i as u64, format!("label {} out of range 0..=9", labels[i])));
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_file(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path)?, path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: PathBuf::from(path),
        source,
    })
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        out.write_u32::<BigEndian>(v).expect("write to Vec");
    }
    out.write_all(&images.pixels).expect("write to Vec");
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABELS_MAGIC).expect("write to Vec");
    out.write_u32::<BigEndian>(labels.len() as u32).expect("write to Vec");
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    write_file(path, &encode_idx_images(images))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_file(path, &encode_idx_labels(labels))
}
