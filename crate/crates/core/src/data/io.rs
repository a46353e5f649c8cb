//! Dataset and feature file formats.
//!
//! Dataset files are line-delimited JSON. The first line is a header record
//! (`"kind": "header"`) carrying the vocabularies, the question-type table,
//! the feature width and the dataset source; every following line is one
//! instance record (`"kind": "instance"`) tagged with its split.
//!
//! Feature files are little-endian binary:
//!
//! ```text
//! magic   8 bytes  "DLFEAT01"
//! count   u64      number of images
//! dim     u64      features per image
//! index   count × (image_id u64, offset u64)   offset counted in f32 values
//! data    f32 values
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{Dataset, DatasetSource, Instance, Split};
use super::qtypes::QuestionTypeTable;
use super::vocab::Vocab;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FEATURE_MAGIC: &[u8; 8] = b"DLFEAT01";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header {
        version: u32,
        answers: Vocab,
        tokens: Vocab,
        question_types: QuestionTypeTable,
        feature_dim: usize,
        source: DatasetSource,
    },
    Instance {
        split: Split,
        #[serde(flatten)]
        instance: Instance,
    },
}

/// Writes `dataset` as line-delimited JSON.
pub fn write_dataset(dataset: &Dataset, mut out: impl Write) -> Result<()> {
    let header = Record::Header {
        version: DATASET_FORMAT_VERSION,
        answers: dataset.answers.clone(),
        tokens: dataset.tokens.clone(),
        question_types: dataset.types.clone(),
        feature_dim: dataset.feature_dim,
        source: dataset.source.clone(),
    };
    let io = |e| Error::Io {
        path: "<dataset stream>".into(),
        source: e,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for (split, insts) in [(Split::Train, &dataset.train), (Split::Test, &dataset.test)] {
        for inst in insts.iter() {
            #[derive(Serialize)]
            struct Line<'a> {
                kind: &'static str,
                split: Split,
                #[serde(flatten)]
                instance: &'a Instance,
            }
            serde_json::to_writer(
                &mut out,
                &Line {
                    kind: "instance",
                    split,
                    instance: inst,
                },
            )?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_dataset(input: impl BufRead) -> Result<Dataset> {
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::Data("dataset file is empty".into())),
            Some((n, line)) => {
                let line = line.map_err(|e| Error::io("<dataset stream>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str::<Record>(&line)
                    .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
            }
        }
    };
    let Record::Header {
        version,
        answers,
        tokens,
        question_types,
        feature_dim,
        source,
    } = header
    else {
        return Err(Error::Data("first record must be the header".into()));
    };
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format version {version} (expected {DATASET_FORMAT_VERSION})"
        )));
    }
    let mut ds = Dataset {
        answers,
        tokens,
        types: question_types,
        feature_dim,
        train: Vec::new(),
        test: Vec::new(),
        source,
    };
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io("<dataset stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?
        {
            Record::Instance { split, instance } => match split {
                Split::Train => ds.train.push(instance),
                Split::Test => ds.test.push(instance),
            },
            Record::Header { .. } => {
                return Err(Error::Data(format!("line {}: unexpected second header", n + 1)))
            }
        }
    }
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(dataset, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

/// SHA-256 of the dataset's serialized form, hex encoded.
pub fn dataset_hash(dataset: &Dataset) -> Result<String> {
    struct HashWriter(Sha256);
    impl Write for HashWriter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.update(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let mut w = HashWriter(Sha256::new());
    write_dataset(dataset, &mut w)?;
    Ok(hex::encode(w.0.finalize()))
}

/// Image features keyed by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    pub features: HashMap<u64, Vec<f32>>,
}

impl FeatureStore {
    pub fn get(&self, image_id: u64) -> Option<&[f32]> {
        self.features.get(&image_id).map(Vec::as_slice)
    }
}

pub fn write_features(store: &FeatureStore, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut ids: Vec<u64> = store.features.keys().copied().collect();
    ids.sort_unstable();
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(ids.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(store.dim as u64).to_le_bytes()).map_err(io)?;
    for (row, id) in ids.iter().enumerate() {
        w.write_all(&id.to_le_bytes()).map_err(io)?;
        w.write_all(&((row * store.dim) as u64).to_le_bytes()).map_err(io)?;
    }
    for id in &ids {
        let v = &store.features[id];
        if v.len() != store.dim {
            return Err(Error::Data(format!(
                "image {id}: {} features, expected {}",
                v.len(),
                store.dim
            )));
        }
        for x in v {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn read_u64(bytes: &[u8], at: &mut usize, path: &Path) -> Result<u64> {
    let end = *at + 8;
    let slice = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Data(format!("{}: truncated feature file", path.display())))?;
    *at = end;
    Ok(u64::from_le_bytes(slice.try_into().expect("8 bytes")))
}

/// Reads a feature file, either the binary format above or a JSON object
/// mapping image ids to arrays.
pub fn read_features(path: &Path) -> Result<FeatureStore> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(FEATURE_MAGIC) {
        return read_json_features(&bytes, path);
    }
    let mut at = FEATURE_MAGIC.len();
    let count = read_u64(&bytes, &mut at, path)? as usize;
    let dim = read_u64(&bytes, &mut at, path)? as usize;
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        let id = read_u64(&bytes, &mut at, path)?;
        let off = read_u64(&bytes, &mut at, path)? as usize;
        index.push((id, off));
    }
    let data = &bytes[at..];
    let mut features = HashMap::with_capacity(count);
    for (id, off) in index {
        let start = off * 4;
        let end = start + dim * 4;
        let raw = data.get(start..end).ok_or_else(|| {
            Error::Data(format!("{}: image {id} points past the end of the data", path.display()))
        })?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if features.insert(id, v).is_some() {
            return Err(Error::Data(format!("{}: image {id} listed twice", path.display())));
        }
    }
    Ok(FeatureStore { dim, features })
}

fn read_json_features(bytes: &[u8], path: &Path) -> Result<FeatureStore> {
    let raw: HashMap<String, Vec<f32>> = serde_json::from_slice(bytes)
        .map_err(|e| Error::Data(format!("{}: not a feature file ({e})", path.display())))?;
    let mut dim = None;
    let mut features = HashMap::with_capacity(raw.len());
    for (k, v) in raw {
        let id: u64 = k
            .parse()
            .map_err(|_| Error::Data(format!("{}: image id {k:?} is not an integer", path.display())))?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::Data(format!(
                    "{}: image {id} has {} features, expected {d}",
                    path.display(),
                    v.len()
                )))
            }
            _ => {}
        }
        features.insert(id, v);
    }
    Ok(FeatureStore {
        dim: dim.unwrap_or(0),
        features,
    })
}
