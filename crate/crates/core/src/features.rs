//! Labelled feature sets: the in-memory type, the binary on-disk format and
//! a seeded synthetic generator.
//!
//! # File format
//!
//! A feature file is little-endian throughout:
//!
//! | offset | size      | content                          |
//! |--------|-----------|----------------------------------|
//! | 0      | 4         | magic `b"FEAT"`                  |
//! | 4      | 4         | format version, `u32` = 1        |
//! | 8      | 8         | row count `n`, `u64`             |
//! | 16     | 8         | dimension `d`, `u64`             |
//! | 24     | `4·n·d`   | IEEE-754 binary32 values, row-major |
//!
//! Labels live in a UTF-8 CSV sidecar next to it: the feature path with its
//! extension replaced by `labels.csv` (`query.feat` -> `query.labels.csv`),
//! header `id,label,camera,role`, one row per feature row in order.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FEAT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 24;

/// Label value marking a distractor / junk row.
pub const JUNK_LABEL: i64 = -1;
/// Camera value meaning "no camera information".
pub const NO_CAMERA: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Gallery,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Query => "query",
            Role::Gallery => "gallery",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "query" => Ok(Role::Query),
            "gallery" => Ok(Role::Gallery),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// An `n × d` matrix of embeddings with per-row identity metadata.
///
/// Immutable once built; every constructor checks the invariants (non-empty,
/// finite, unique ids, one label/camera/role per row).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    n: usize,
    d: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    labels: Vec<i64>,
    cameras: Vec<i64>,
    roles: Vec<Role>,
}

impl FeatureSet {
    pub fn new(
        d: usize,
        data: Vec<f32>,
        ids: Vec<String>,
        labels: Vec<i64>,
        cameras: Vec<i64>,
        roles: Vec<Role>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidFeatureSet(
                "dimension must be at least 1".into(),
            ));
        }
        if data.len() % d != 0 {
            return Err(Error::InvalidFeatureSet(format!(
                "{} values is not a multiple of d = {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        if n == 0 {
            return Err(Error::InvalidFeatureSet("feature set has no rows".into()));
        }
        for (what, len) in [
            ("ids", ids.len()),
            ("labels", labels.len()),
            ("cameras", cameras.len()),
            ("roles", roles.len()),
        ] {
            if len != n {
                return Err(Error::InvalidFeatureSet(format!(
                    "{len} {what} for {n} rows"
                )));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatureSet(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidFeatureSet(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            n,
            d,
            data,
            ids,
            labels,
            cameras,
            roles,
        })
    }

    /// Builds a set where every row has the same role, ids `"{prefix}{row}"`
    /// and no camera information.
    pub fn from_rows(d: usize, data: Vec<f32>, labels: Vec<i64>, role: Role) -> Result<Self> {
        let n = labels.len();
        let prefix = match role {
            Role::Query => "q",
            Role::Gallery => "g",
        };
        let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
        Self::new(d, data, ids, labels, vec![NO_CAMERA; n], vec![role; n])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn cameras(&self) -> &[i64] {
        &self.cameras
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    /// Same metadata, new feature values.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(
            self.d,
            data,
            self.ids.clone(),
            self.labels.clone(),
            self.cameras.clone(),
            self.roles.clone(),
        )
    }

    /// Rows whose role matches, in order.
    pub fn select_role(&self, role: Role) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n).filter(|&i| self.roles[i] == role).collect();
        if keep.is_empty() {
            return Err(Error::InvalidFeatureSet(format!("no {role} rows")));
        }
        let mut data = Vec::with_capacity(keep.len() * self.d);
        for &i in &keep {
            data.extend_from_slice(self.row(i));
        }
        Self::new(
            self.d,
            data,
            keep.iter().map(|&i| self.ids[i].clone()).collect(),
            keep.iter().map(|&i| self.labels[i]).collect(),
            keep.iter().map(|&i| self.cameras[i]).collect(),
            keep.iter().map(|&i| self.roles[i]).collect(),
        )
    }
}

/// Sidecar path for a feature file: extension replaced by `labels.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("labels.csv")
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarRow {
    id: String,
    label: i64,
    camera: i64,
    role: Role,
}

pub fn write_feature_set(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + fs.data.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(fs.n as u64).to_le_bytes());
    buf.extend_from_slice(&(fs.d as u64).to_le_bytes());
    for v in &fs.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let mut w = csv::Writer::from_path(&side).map_err(|e| csv_io(&side, e))?;
    for i in 0..fs.n {
        w.serialize(SidecarRow {
            id: fs.ids[i].clone(),
            label: fs.labels[i],
            camera: fs.cameras[i],
            role: fs.roles[i],
        })
        .map_err(|e| csv_io(&side, e))?;
    }
    w.flush().map_err(|e| Error::io(&side, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::BadSidecar {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn load_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (d, data) = parse_feature_bytes(path, &bytes)?;
    let n = data.len() / d;

    let side = sidecar_path(path);
    let mut rdr = csv::Reader::from_path(&side).map_err(|e| csv_io(&side, e))?;
    let headers = rdr.headers().map_err(|e| csv_io(&side, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "camera", "role"] {
        return Err(Error::BadSidecar {
            path: side,
            message: format!("expected header id,label,camera,role, found {headers:?}"),
        });
    }
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut cameras = Vec::with_capacity(n);
    let mut roles = Vec::with_capacity(n);
    for (line, rec) in rdr.deserialize::<SidecarRow>().enumerate() {
        let rec = rec.map_err(|e| Error::BadSidecar {
            path: side.clone(),
            message: format!("row {}: {e}", line + 1),
        })?;
        ids.push(rec.id);
        labels.push(rec.label);
        cameras.push(rec.camera);
        roles.push(rec.role);
    }
    if ids.len() != n {
        return Err(Error::LabelCountMismatch {
            path: side,
            expected: n,
            found: ids.len(),
        });
    }
    FeatureSet::new(d, data, ids, labels, cameras, roles)
}

/// Decodes the binary part of a feature file, returning `(d, values)`.
fn parse_feature_bytes(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    let truncated = |expected: u64| Error::TruncatedFile {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN as usize {
        return Err(truncated(HEADER_LEN));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(Error::InvalidFeatureSet(format!(
            "{}: header declares n = {n}, d = {d}",
            path.display()
        )));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| {
            Error::InvalidFeatureSet(format!("{}: header size overflows", path.display()))
        })?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(truncated(expected));
    }
    if actual > expected {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            expected,
            extra: actual - expected,
        });
    }
    let d = d as usize;
    let payload = &bytes[HEADER_LEN as usize..];
    let mut data = Vec::with_capacity(payload.len() / 4);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature {
                path: path.to_path_buf(),
                row: k / d,
                col: k % d,
                offset: HEADER_LEN + 4 * k as u64,
            });
        }
        data.push(v);
    }
    Ok((d, data))
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub queries_per_class: usize,
    pub seed: u64,
}

/// Draws `n_classes` unit centroids and `per_class` noisy, re-normalised
/// points around each; the first `queries_per_class` points of every class
/// become queries, the rest gallery.
///
/// Randomness comes from a `ChaCha8Rng` seeded with `seed` via
/// `SeedableRng::seed_from_u64`, sampled with `StandardNormal` in a fixed
/// order: all centroid coordinates first (class-major), then every point's
/// noise (class-major, point-major). Labels are the class index and cameras
/// alternate 0/1 by the point's position within its class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<(FeatureSet, FeatureSet)> {
    if spec.n_classes == 0 || spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::DegenerateSpec(
            "n_classes, per_class and dim must be positive".into(),
        ));
    }
    if spec.per_class < spec.queries_per_class {
        return Err(Error::DegenerateSpec(format!(
            "per_class = {} < queries_per_class = {}",
            spec.per_class, spec.queries_per_class
        )));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::DegenerateSpec(format!(
            "noise_sigma = {} must be finite and nonnegative",
            spec.noise_sigma
        )));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centroids = Vec::with_capacity(spec.n_classes * d);
    for _ in 0..spec.n_classes {
        loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                centroids.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }

    let mut query = Parts::default();
    let mut gallery = Parts::default();
    for class in 0..spec.n_classes {
        let c = &centroids[class * d..(class + 1) * d];
        for p in 0..spec.per_class {
            let mut v: Vec<f64> = c
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + spec.noise_sigma * z
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                v.iter_mut().for_each(|x| *x /= norm);
            } else {
                v.copy_from_slice(c);
            }
            let (parts, prefix) = if p < spec.queries_per_class {
                (&mut query, "q")
            } else {
                (&mut gallery, "g")
            };
            parts.data.extend(v.iter().map(|&x| x as f32));
            parts.ids.push(format!("{prefix}{class}_{p}"));
            parts.labels.push(class as i64);
            parts.cameras.push((p % 2) as i64);
        }
    }
    Ok((
        query.finish(d, Role::Query)?,
        gallery.finish(d, Role::Gallery)?,
    ))
}

#[derive(Default)]
struct Parts {
    data: Vec<f32>,
    ids: Vec<String>,
    labels: Vec<i64>,
    cameras: Vec<i64>,
}

impl Parts {
    fn finish(self, d: usize, role: Role) -> Result<FeatureSet> {
        let n = self.ids.len();
        if n == 0 {
            return Err(Error::DegenerateSpec(format!(
                "spec yields an empty {role} set"
            )));
        }
        FeatureSet::new(
            d,
            self.data,
            self.ids,
            self.labels,
            self.cameras,
            vec![role; n],
        )
    }
}
