//! Artifact persistence: the binary model container, fold-in embedding
//! exports, the split manifest, and the fingerprints chaining them together.
//!
//! The model container is little-endian throughout: magic `WFLD1`, a kind
//! tag, dims (M, N, d), lambda, a payload checksum, then row-major `f32`
//! arrays U, V and sigma (when present), `f64` weight vectors and `u32`
//! degree vectors. Embeddings are stored in 32-bit and promoted on load.

use std::io::Write;
use std::path::Path;

use crate::data::{GraphStats, TemporalSplit};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{EmbeddingModel, ModelKind};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 5] = b"WFLD1";
pub const EMBEDDINGS_MAGIC: &[u8; 5] = b"WFEM1";
const HEADER_LEN: usize = 5 + 1 + 8 + 8 + 4 + 8 + 8;

/// FNV-1a, the 64-bit variant; stable across platforms.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn file_fingerprint(path: impl AsRef<Path>) -> Result<u64> {
    Ok(fnv1a(&std::fs::read(path)?))
}

/// Content hash of an interaction log: dims plus every event triple.
pub fn log_fingerprint(log: &crate::data::InteractionLog) -> u64 {
    let mut bytes = Vec::with_capacity(16 + log.len() * 16);
    bytes.extend_from_slice(&(log.num_users() as u64).to_le_bytes());
    bytes.extend_from_slice(&(log.num_items() as u64).to_le_bytes());
    for e in log.events() {
        bytes.extend_from_slice(&e.user.to_le_bytes());
        bytes.extend_from_slice(&e.item.to_le_bytes());
        bytes.extend_from_slice(&e.timestamp.to_le_bytes());
    }
    fnv1a(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub kind: ModelKind,
    pub num_users: u64,
    pub num_items: u64,
    pub rank: u32,
    pub lambda: f64,
    pub checksum: u64,
}

fn kind_tag(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::UltraGcn => 0,
        ModelKind::PureSvd => 1,
    }
}

fn kind_from_tag(tag: u8, path: &Path) -> Result<ModelKind> {
    match tag {
        0 => Ok(ModelKind::UltraGcn),
        1 => Ok(ModelKind::PureSvd),
        other => Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: format!("unknown model kind tag {other}"),
        }),
    }
}

fn payload_bytes<T: Scalar>(model: &EmbeddingModel<T>) -> Vec<u8> {
    let m = model.num_users();
    let n = model.num_items();
    let d = model.rank;
    let mut out = Vec::with_capacity((m + n) * d * 4 + (m + n) * 12);
    for &x in model.user_embeddings.data() {
        out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    for &x in model.item_embeddings.data() {
        out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
    }
    if let Some(sigma) = &model.sigma {
        for &x in sigma {
            out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    for &b in model.stats.beta_users_raw() {
        out.extend_from_slice(&b.to_f64_lossy().to_le_bytes());
    }
    for &b in model.stats.beta_items() {
        out.extend_from_slice(&b.to_f64_lossy().to_le_bytes());
    }
    for &deg in &model.stats.user_degrees {
        out.extend_from_slice(&deg.to_le_bytes());
    }
    for &deg in &model.stats.item_degrees {
        out.extend_from_slice(&deg.to_le_bytes());
    }
    out
}

/// Serialize the full container to bytes.
pub fn serialize_model<T: Scalar>(model: &EmbeddingModel<T>) -> Vec<u8> {
    let payload = payload_bytes(model);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.push(kind_tag(model.kind));
    out.extend_from_slice(&(model.num_users() as u64).to_le_bytes());
    out.extend_from_slice(&(model.num_items() as u64).to_le_bytes());
    out.extend_from_slice(&(model.rank as u32).to_le_bytes());
    out.extend_from_slice(&model.lambda.to_f64_lossy().to_le_bytes());
    out.extend_from_slice(&fnv1a(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Identity of a model state: the hash of its serialized container.
pub fn model_fingerprint<T: Scalar>(model: &EmbeddingModel<T>) -> u64 {
    fnv1a(&serialize_model(model))
}

pub fn write_model<T: Scalar>(path: impl AsRef<Path>, model: &EmbeddingModel<T>) -> Result<u64> {
    let bytes = serialize_model(model);
    std::fs::write(path, &bytes)?;
    Ok(fnv1a(&bytes))
}

fn take<'a>(bytes: &'a [u8], off: &mut usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    if *off + len > bytes.len() {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: format!(
                "truncated: wanted {} bytes at offset {}, file has {}",
                len,
                off,
                bytes.len()
            ),
        });
    }
    let slice = &bytes[*off..*off + len];
    *off += len;
    Ok(slice)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(ModelHeader, usize)> {
    let mut off = 0usize;
    let magic = take(bytes, &mut off, 5, path)?;
    if magic != MODEL_MAGIC {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: "bad magic".into(),
        });
    }
    let kind = kind_from_tag(take(bytes, &mut off, 1, path)?[0], path)?;
    let num_users = u64::from_le_bytes(take(bytes, &mut off, 8, path)?.try_into().unwrap());
    let num_items = u64::from_le_bytes(take(bytes, &mut off, 8, path)?.try_into().unwrap());
    let rank = u32::from_le_bytes(take(bytes, &mut off, 4, path)?.try_into().unwrap());
    let lambda = f64::from_le_bytes(take(bytes, &mut off, 8, path)?.try_into().unwrap());
    let checksum = u64::from_le_bytes(take(bytes, &mut off, 8, path)?.try_into().unwrap());
    Ok((
        ModelHeader {
            kind,
            num_users,
            num_items,
            rank,
            lambda,
            checksum,
        },
        off,
    ))
}

/// Header fields only; enough for `inspect` to print before verifying.
pub fn read_header(path: impl AsRef<Path>) -> Result<ModelHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    Ok(parse_header(&bytes, path)?.0)
}

/// Load a model, verifying magic, lengths and the payload checksum. Returns
/// the model and the file fingerprint.
pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<(EmbeddingModel<T>, u64)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let fingerprint = fnv1a(&bytes);
    let (header, mut off) = parse_header(&bytes, path)?;

    let m = header.num_users as usize;
    let n = header.num_items as usize;
    let d = header.rank as usize;
    let sigma_bytes = match header.kind {
        ModelKind::PureSvd => d * 4,
        ModelKind::UltraGcn => 0,
    };
    let expected_payload = (m + n) * d * 4 + sigma_bytes + (m + n) * 8 + (m + n) * 4;
    let payload = &bytes[off..];
    if payload.len() != expected_payload {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: format!(
                "truncated or padded: expected {expected_payload} payload bytes, found {}",
                payload.len()
            ),
        });
    }
    let stored = fnv1a(payload);
    if stored != header.checksum {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: format!(
                "payload checksum mismatch: header {:016x}, computed {:016x}",
                header.checksum, stored
            ),
        });
    }

    let read_f32s = |off: &mut usize, count: usize| -> Result<Vec<T>> {
        let raw = take(&bytes, off, count * 4, path)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect())
    };
    let read_f64s = |off: &mut usize, count: usize| -> Result<Vec<T>> {
        let raw = take(&bytes, off, count * 8, path)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    };
    let read_u32s = |off: &mut usize, count: usize| -> Result<Vec<u32>> {
        let raw = take(&bytes, off, count * 4, path)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let user_embeddings = DenseMatrix::from_vec(m, d, read_f32s(&mut off, m * d)?);
    let item_embeddings = DenseMatrix::from_vec(n, d, read_f32s(&mut off, n * d)?);
    let sigma = match header.kind {
        ModelKind::PureSvd => Some(read_f32s(&mut off, d)?.into_iter().collect::<Vec<T>>()),
        ModelKind::UltraGcn => None,
    };
    let beta_u = read_f64s(&mut off, m)?;
    let beta_i = read_f64s(&mut off, n)?;
    let user_degrees = read_u32s(&mut off, m)?;
    let item_degrees = read_u32s(&mut off, n)?;
    if off != bytes.len() {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: format!("{} trailing bytes", bytes.len() - off),
        });
    }

    let stats = GraphStats::from_parts(user_degrees, item_degrees, beta_u, beta_i);
    Ok((
        EmbeddingModel {
            kind: header.kind,
            user_embeddings,
            item_embeddings,
            stats,
            sigma,
            rank: d,
            lambda: T::from_f64_lossy(header.lambda),
        },
        fingerprint,
    ))
}

/// One warm user's exported fold-in result.
#[derive(Debug, Clone)]
pub struct FoldEntry<T> {
    pub user: u64,
    pub time_ns: u64,
    pub embedding: Vec<T>,
}

/// Per-strategy fold-in output: updated embeddings and per-user times for
/// each processed warm user, chained to the model by fingerprint.
#[derive(Debug, Clone)]
pub struct FoldInEmbeddings<T> {
    pub strategy: String,
    pub model_fingerprint: u64,
    pub rank: usize,
    pub entries: Vec<FoldEntry<T>>,
}

pub fn write_foldin_embeddings<T: Scalar>(
    path: impl AsRef<Path>,
    out: &FoldInEmbeddings<T>,
) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(EMBEDDINGS_MAGIC);
    let name = out.strategy.as_bytes();
    bytes.push(name.len() as u8);
    bytes.extend_from_slice(name);
    bytes.extend_from_slice(&out.model_fingerprint.to_le_bytes());
    bytes.extend_from_slice(&(out.rank as u32).to_le_bytes());
    bytes.extend_from_slice(&(out.entries.len() as u64).to_le_bytes());
    for entry in &out.entries {
        bytes.extend_from_slice(&entry.user.to_le_bytes());
        bytes.extend_from_slice(&entry.time_ns.to_le_bytes());
        for &x in &entry.embedding {
            bytes.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_foldin_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<FoldInEmbeddings<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut off = 0usize;
    let magic = take(&bytes, &mut off, 5, path)?;
    if magic != EMBEDDINGS_MAGIC {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            message: "bad magic".into(),
        });
    }
    let name_len = take(&bytes, &mut off, 1, path)?[0] as usize;
    let strategy = String::from_utf8_lossy(take(&bytes, &mut off, name_len, path)?).into_owned();
    let model_fingerprint =
        u64::from_le_bytes(take(&bytes, &mut off, 8, path)?.try_into().unwrap());
    let rank = u32::from_le_bytes(take(&bytes, &mut off, 4, path)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(&bytes, &mut off, 8, path)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let user = u64::from_le_bytes(take(&bytes, &mut off, 8, path)?.try_into().unwrap());
        let time_ns = u64::from_le_bytes(take(&bytes, &mut off, 8, path)?.try_into().unwrap());
        let raw = take(&bytes, &mut off, rank * 4, path)?;
        let embedding = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        entries.push(FoldEntry {
            user,
            time_ns,
            embedding,
        });
    }
    Ok(FoldInEmbeddings {
        strategy,
        model_fingerprint,
        rank,
        entries,
    })
}

/// Human-readable record of the split boundaries and event counts, written
/// next to the other outputs for reproducibility.
pub fn write_split_manifest(
    path: impl AsRef<Path>,
    split: &TemporalSplit,
    dataset_fingerprint: u64,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "t1 = {}", split.t1)?;
    writeln!(f, "t2 = {}", split.t2)?;
    writeln!(f, "train_events = {}", split.train.len())?;
    writeln!(f, "warm_events = {}", split.warm.len())?;
    writeln!(f, "test_events = {}", split.test.len())?;
    writeln!(f, "users = {}", split.train.num_users())?;
    writeln!(f, "items = {}", split.train.num_items())?;
    writeln!(f, "dataset_fingerprint = {:016x}", dataset_fingerprint)?;
    Ok(())
}
