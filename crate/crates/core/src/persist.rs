//! Model container.
//!
//! ```text
//! magic "GRU4REC\0" | u32 version | u64 meta_len | meta (JSON)
//! | u32 n_tensors | { u32 name_len | name | u32 ndim | u64 dims[ndim] | f32 data }*
//! | sha256 of everything before
//! ```
//!
//! All integers and floats are little-endian. In shared-embedding mode the
//! tied table is stored once as `item_embedding`. The item map is embedded
//! in the metadata and also written next to the model as a TSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ItemMap;
use crate::model::{Gru4Rec, ModelConfig};
use crate::tensor::Matrix;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"GRU4REC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported model format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("malformed model file: {0}")]
    Format(String),
}

impl PersistError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
        move |source| PersistError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    n_items: usize,
    model: ModelConfig,
    train: TrainConfig,
    items: Vec<String>,
}

/// A loaded model with everything needed to use it.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: Gru4Rec<f32>,
    pub config: TrainConfig,
    pub item_map: ItemMap,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Where the item map TSV of a model file lives.
pub fn item_map_path(model_path: &Path) -> PathBuf {
    let mut name = model_path.file_name().unwrap_or_default().to_os_string();
    name.push(".items.tsv");
    model_path.with_file_name(name)
}

/// Serialises a model to bytes (deterministic for identical inputs).
pub fn encode_model(model: &Gru4Rec<f32>, config: &TrainConfig, item_map: &ItemMap) -> Vec<u8> {
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        n_items: model.n_items(),
        model: model.config().clone(),
        train: config.clone(),
        items: item_map.labels().to_vec(),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serialises");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    let names = model.param_names();
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in names.iter().zip(params) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(p.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.cols() as u64).to_le_bytes());
        for v in p.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| PersistError::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, PersistError> {
        usize::try_from(self.u64()?).map_err(|_| PersistError::Format("length overflow".into()))
    }
}

/// Parses bytes produced by [`encode_model`]. Nothing is returned unless
/// the checksum and every structural check pass.
pub fn decode_model(bytes: &[u8]) -> Result<SavedModel, PersistError> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(PersistError::Integrity("not a model file (bad magic or too short)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(PersistError::Integrity("checksum mismatch (file corrupted or truncated)".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(PersistError::Version { found: version });
    }
    let meta_len = r.len()?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| PersistError::Format(format!("metadata: {e}")))?;
    if meta.format_version != version || meta.n_items != meta.items.len() {
        return Err(PersistError::Format("metadata disagrees with header".into()));
    }
    let n = r.u32()? as usize;
    let mut names = Vec::with_capacity(n);
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| PersistError::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        if r.u32()? != 2 {
            return Err(PersistError::Format(format!("tensor `{name}` is not 2-d")));
        }
        let (rows, cols) = (r.len()?, r.len()?);
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| PersistError::Format("tensor too large".into()))?;
        let data = r
            .take(count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != body.len() {
        return Err(PersistError::Format("trailing bytes after tensors".into()));
    }
    let model = Gru4Rec::from_params(meta.model, tensors)
        .map_err(|e| PersistError::Format(e.to_string()))?;
    if model.param_names() != names {
        return Err(PersistError::Format(format!(
            "tensor names {names:?} do not match the architecture"
        )));
    }
    let item_map = ItemMap::from_labels(meta.items).map_err(|e| PersistError::Format(e.to_string()))?;
    Ok(SavedModel {
        model,
        config: meta.train,
        item_map,
    })
}

/// Writes the model file and its item map TSV; returns the file's SHA-256.
/// The model is written to a temporary name first and renamed into place.
pub fn save_model(
    path: &Path,
    model: &Gru4Rec<f32>,
    config: &TrainConfig,
    item_map: &ItemMap,
) -> Result<String, PersistError> {
    let bytes = encode_model(model, config, item_map);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(PersistError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(PersistError::io(path))?;
    let map_path = item_map_path(path);
    item_map.write_tsv(&map_path).map_err(|e| PersistError::Io {
        path: map_path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(sha256_hex(&bytes))
}

pub fn load_model(path: &Path) -> Result<SavedModel, PersistError> {
    let bytes = fs::read(path).map_err(PersistError::io(path))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmbeddingMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(mode: EmbeddingMode) -> (Gru4Rec<f32>, ItemMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Gru4Rec::init(
            ModelConfig {
                n_items: 6,
                layers: vec![5, 4],
                embedding: mode,
            },
            &mut rng,
        )
        .unwrap();
        let map = ItemMap::from_labels((0..6).map(|i| format!("item{i}")).collect()).unwrap();
        (m, map)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for mode in [EmbeddingMode::None, EmbeddingMode::Separate(3), EmbeddingMode::Shared] {
            let (m, map) = model(mode);
            let cfg = TrainConfig::default();
            let back = decode_model(&encode_model(&m, &cfg, &map)).unwrap();
            assert_eq!(back.model, m);
            assert_eq!(back.config, cfg);
            assert_eq!(back.item_map.labels(), map.labels());
        }
    }

    #[test]
    fn shared_table_stored_once_and_restored_tied() {
        let (m, map) = model(EmbeddingMode::Shared);
        let back = decode_model(&encode_model(&m, &TrainConfig::default(), &map)).unwrap();
        let names = back.model.param_names();
        assert_eq!(names.iter().filter(|n| n.contains("embedding")).count(), 1);
        assert!(std::ptr::eq(
            back.model.input_table().unwrap(),
            back.model.output_table()
        ));
    }

    #[test]
    fn corruption_and_truncation_are_detected() {
        let (m, map) = model(EmbeddingMode::Separate(3));
        let bytes = encode_model(&m, &TrainConfig::default(), &map);
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(matches!(decode_model(&flipped), Err(PersistError::Integrity(_))));
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 10]),
            Err(PersistError::Integrity(_))
        ));
        assert!(matches!(decode_model(b"hello"), Err(PersistError::Integrity(_))));
    }

    #[test]
    fn version_is_checked() {
        let (m, map) = model(EmbeddingMode::None);
        let mut bytes = encode_model(&m, &TrainConfig::default(), &map);
        bytes[8] = 9;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(matches!(decode_model(&bytes), Err(PersistError::Version { found: 9 })));
    }

    #[test]
    fn save_writes_model_and_item_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gru");
        let (m, map) = model(EmbeddingMode::Shared);
        let sum = save_model(&path, &m, &TrainConfig::default(), &map).unwrap();
        assert_eq!(sum, sha256_hex(&fs::read(&path).unwrap()));
        let back = ItemMap::read_tsv(&item_map_path(&path)).unwrap();
        assert_eq!(back.labels(), map.labels());
        assert_eq!(load_model(&path).unwrap().model, m);
    }
}
