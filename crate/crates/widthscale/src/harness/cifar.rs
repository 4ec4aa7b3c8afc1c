//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by 3072 pixel bytes
//! (red, green, blue planes, each 32×32 row-major).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::netcore::Dataset;

pub const RECORD_BYTES: usize = 3073;
pub const PIXELS: usize = 3072;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const TRAIN_SIZE: usize = 1024;
pub const TEST_SIZE: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Box<[u8; PIXELS]>,
}

impl CifarRecord {
    /// `+1` for airplane (0), `-1` for automobile (1), `None` for the other classes.
    pub fn binary_label(&self) -> Option<f64> {
        match self.label {
            0 => Some(1.0),
            1 => Some(-1.0),
            _ => None,
        }
    }

    /// Pixels mapped to `[-1, 1]` and scaled by `1/√3072`.
    pub fn features(&self) -> impl Iterator<Item = f64> + '_ {
        let root = (PIXELS as f64).sqrt();
        self.pixels.iter().map(move |&v| (f64::from(v) / 127.5 - 1.0) / root)
    }
}

/// Parses a whole batch file. A trailing partial record is an ingest error at its start offset.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    let tail = bytes.len() % RECORD_BYTES;
    if tail != 0 {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            offset: (bytes.len() - tail) as u64,
            reason: format!("truncated record: {tail} of {RECORD_BYTES} bytes"),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, chunk)| {
            let label = chunk[0];
            if label > 9 {
                return Err(Error::CorruptRecord {
                    path: path.to_path_buf(),
                    offset: (i * RECORD_BYTES) as u64,
                    label,
                });
            }
            let pixels: Box<[u8; PIXELS]> = chunk[1..].to_vec().into_boxed_slice().try_into().expect("3072 bytes");
            Ok(CifarRecord { label, pixels })
        })
        .collect()
}

pub fn read_batch(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        offset: 0,
        reason: e.to_string(),
    })?;
    parse_records(&bytes, path)
}

pub fn encode_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    out
}

/// Writes records in the binary batch format.
pub fn write_batch(path: &Path, records: &[CifarRecord]) -> Result<()> {
    fs::write(path, encode_records(records))?;
    Ok(())
}

fn take_binary(files: &[PathBuf], n: usize, name: &str) -> Result<Dataset> {
    let mut xs = Vec::with_capacity(n * PIXELS);
    let mut ys = Vec::with_capacity(n);
    'files: for path in files {
        for rec in read_batch(path)? {
            if ys.len() == n {
                break 'files;
            }
            if let Some(y) = rec.binary_label() {
                xs.extend(rec.features());
                ys.push(y);
            }
        }
    }
    if ys.len() < n {
        let last = files.last().cloned().unwrap_or_default();
        let offset = fs::metadata(&last).map(|m| m.len()).unwrap_or(0);
        return Err(Error::Ingest {
            path: last,
            offset,
            reason: format!("only {} airplane/automobile records, need {n}", ys.len()),
        });
    }
    let inputs = Array2::from_shape_vec((n, PIXELS), xs).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(name, "pixels v/127.5-1, scaled by 1/sqrt(3072)", inputs, ys)
}

/// Airplane (`+1`) vs automobile (`-1`): the first 1024 such training records across the training
/// batches in order, and the first 2000 test records.
pub fn load_cifar2(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train_files: Vec<PathBuf> = TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    let train = take_binary(&train_files, TRAIN_SIZE, "cifar2-train")?;
    let test = take_binary(&[dir.join(TEST_FILE)], TEST_SIZE, "cifar2-test")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> CifarRecord {
        CifarRecord {
            label,
            pixels: Box::new([fill; PIXELS]),
        }
    }

    #[test]
    fn feature_mapping() {
        let r = record(0, 255);
        let f: Vec<f64> = r.features().collect();
        assert_eq!(f[0], 1.0 / 3072f64.sqrt());
        assert_eq!(record(1, 0).features().next().unwrap(), -1.0 / 3072f64.sqrt());
        assert_eq!(record(3, 0).binary_label(), None);
        assert_eq!(record(1, 0).binary_label(), Some(-1.0));
    }

    #[test]
    fn full_batch_size() {
        assert_eq!(30_730_000 / RECORD_BYTES, 10_000);
        assert_eq!(30_730_000 % RECORD_BYTES, 0);
    }

    #[test]
    fn truncation_and_corruption_offsets() {
        let p = Path::new("x.bin");
        let mut bytes = encode_records(&[record(0, 1), record(5, 2)]);
        assert_eq!(parse_records(&bytes, p).unwrap().len(), 2);
        bytes.truncate(RECORD_BYTES + 10);
        match parse_records(&bytes, p) {
            Err(Error::Ingest { offset, .. }) => assert_eq!(offset, RECORD_BYTES as u64),
            other => panic!("{other:?}"),
        }
        let bad = encode_records(&[record(0, 1), record(10, 2)]);
        match parse_records(&bad, p) {
            Err(Error::CorruptRecord { offset, label, .. }) => {
                assert_eq!(offset, RECORD_BYTES as u64);
                assert_eq!(label, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_directory_is_an_ingest_error() {
        let err = load_cifar2(Path::new("/nonexistent/cifar")).unwrap_err();
        assert!(matches!(err, Error::Ingest { offset: 0, .. }));
    }
}
