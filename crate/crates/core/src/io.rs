//! On-disk formats: the KGMK binary matrix container, label and codec
//! sidecars, key files and partition dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::codec::LatentGrid;
use crate::diffusion::{PredictorKind, ScheduleSpec};
use crate::error::{Error, Result};
use crate::kg::{EmbeddingMatrix, LabelMap};
use crate::spectral::{MaskMatrix, WatermarkKey};

pub const MAGIC: &[u8; 4] = b"KGMK";
pub const VERSION: u32 = 1;

fn write_section(w: &mut impl Write, m: &Array2<f64>) -> Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_section(r: &mut impl Read) -> Result<Array2<f64>> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows.checked_mul(cols).ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated matrix payload".into()))?;
        data.push(f64::from_le_bytes(b));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

/// Magic, version, then two `rows, cols, f64...` sections (little endian,
/// row-major).
pub fn write_matrices(w: &mut impl Write, first: &Array2<f64>, second: &Array2<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_section(w, first)?;
    write_section(w, second)?;
    Ok(())
}

pub fn read_matrices(r: &mut impl Read) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| Error::Format("file too short".into()))?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let first = read_section(r)?;
    let second = read_section(r)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok((first, second))
}

pub fn write_embedding(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrices(&mut w, emb.entities(), emb.relation_phases())?;
    w.flush()?;
    Ok(())
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let (ent, rel) = read_matrices(&mut BufReader::new(File::open(path)?))?;
    EmbeddingMatrix::new(ent, rel)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `<embedding>.labels.json`.
pub fn labels_path(emb_path: impl AsRef<Path>) -> PathBuf {
    sidecar(emb_path.as_ref(), ".labels.json")
}

/// `<grid>.meta.json`.
pub fn meta_path(grid_path: impl AsRef<Path>) -> PathBuf {
    sidecar(grid_path.as_ref(), ".meta.json")
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_labels(emb_path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_json(labels_path(emb_path), labels)
}

pub fn read_labels(emb_path: impl AsRef<Path>) -> Result<LabelMap> {
    read_json(labels_path(emb_path))
}

/// Grid values in the first section, an empty second section, and the codec
/// metadata in a JSON sidecar.
pub fn write_latent_grid(path: impl AsRef<Path>, grid: &LatentGrid) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_matrices(&mut w, &grid.data, &Array2::zeros((0, 0)))?;
    w.flush()?;
    write_json(meta_path(path), grid)
}

pub fn read_latent_grid(path: impl AsRef<Path>) -> Result<LatentGrid> {
    let path = path.as_ref();
    let (data, _) = read_matrices(&mut BufReader::new(File::open(path)?))?;
    let meta: LatentGrid = read_json(meta_path(path))?;
    Ok(LatentGrid { data, ..meta })
}

/// Serialized key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub seed: u64,
    pub sigma2: f64,
    pub mask_rle: Vec<usize>,
    pub m: usize,
    pub n: usize,
    pub schedule: ScheduleSpec,
    pub embed_steps: usize,
    pub detect_steps: usize,
    pub alpha_correction: f64,
    #[serde(default)]
    pub predictor: PredictorKind,
}

impl From<&WatermarkKey> for KeyRecord {
    fn from(k: &WatermarkKey) -> Self {
        let (m, n) = k.dim();
        Self {
            seed: k.seed,
            sigma2: k.sigma2,
            mask_rle: k.mask.to_rle(),
            m,
            n,
            schedule: k.schedule.clone(),
            embed_steps: k.embed_steps,
            detect_steps: k.detect_steps,
            alpha_correction: k.alpha_correction,
            predictor: k.predictor,
        }
    }
}

impl TryFrom<KeyRecord> for WatermarkKey {
    type Error = Error;

    fn try_from(r: KeyRecord) -> Result<Self> {
        let key = WatermarkKey {
            seed: r.seed,
            sigma2: r.sigma2,
            mask: MaskMatrix::from_rle(r.m, r.n, &r.mask_rle)?,
            schedule: r.schedule,
            embed_steps: r.embed_steps,
            detect_steps: r.detect_steps,
            alpha_correction: r.alpha_correction,
            predictor: r.predictor,
        };
        key.validate()?;
        Ok(key)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KeyFile {
    One(KeyRecord),
    Many(Vec<KeyRecord>),
}

pub fn parse_key_ring(text: &str) -> Result<Vec<WatermarkKey>> {
    let records = match serde_json::from_str::<KeyFile>(text) {
        Ok(KeyFile::One(r)) => vec![r],
        Ok(KeyFile::Many(v)) => v,
        Err(e) => return Err(Error::Format(format!("key file: {e}"))),
    };
    if records.is_empty() {
        return Err(Error::Format("key file holds no keys".into()));
    }
    records.into_iter().map(WatermarkKey::try_from).collect()
}

pub fn read_key_ring(path: impl AsRef<Path>) -> Result<Vec<WatermarkKey>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_key_ring(&text)
}

/// A single key is written as an object, several as an array.
pub fn write_key_ring(path: impl AsRef<Path>, ring: &[WatermarkKey]) -> Result<()> {
    let records: Vec<KeyRecord> = ring.iter().map(KeyRecord::from).collect();
    if records.len() == 1 {
        write_json(path, &records[0])
    } else {
        write_json(path, &records)
    }
}
