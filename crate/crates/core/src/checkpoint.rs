//! On-disk parameter sets: a directory holding `manifest.json` and one
//! little-endian `f64` file per role table (`<role>.bin`, row-major).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::models::{ModelError, ModelKind, ParameterSet, Role};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("missing checkpoint file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest {}: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },
    #[error("table file {} holds {found} bytes, expected {expected}", path.display())]
    TableSize {
        path: PathBuf,
        found: usize,
        expected: usize,
    },
    #[error("checkpoint has |E|={ckpt_entities}, |R|={ckpt_relations} but dataset has |E|={data_entities}, |R|={data_relations}")]
    DatasetMismatch {
        ckpt_entities: usize,
        ckpt_relations: usize,
        data_entities: usize,
        data_relations: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub dim: usize,
    pub entity_count: usize,
    pub relation_count: usize,
    pub roles: Vec<Role>,
    pub seed: u64,
    /// Hash of the run configuration that produced the tables, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Manifest {
    pub fn check_dataset(&self, entity_count: usize, relation_count: usize) -> Result<(), CheckpointError> {
        if self.entity_count != entity_count || self.relation_count != relation_count {
            return Err(CheckpointError::DatasetMismatch {
                ckpt_entities: self.entity_count,
                ckpt_relations: self.relation_count,
                data_entities: entity_count,
                data_relations: relation_count,
            });
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CheckpointError::MissingFile(path.to_path_buf())
        } else {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

pub fn table_file(dir: &Path, role: Role) -> PathBuf {
    dir.join(format!("{}.bin", role.name()))
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ParameterSet,
    seed: u64,
    config_hash: Option<&str>,
) -> Result<Manifest, CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        kind: params.kind(),
        dim: params.dim(),
        entity_count: params.entity_count(),
        relation_count: params.relation_count(),
        roles: params.roles().to_vec(),
        seed,
        config_hash: config_hash.map(str::to_string),
    };
    for (role, table) in params.roles().iter().zip(params.tables()) {
        let bytes: Vec<u8> = table.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = table_file(dir, *role);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.roles != manifest.kind.roles() {
        return Err(CheckpointError::Manifest {
            path,
            reason: format!("roles {:?} do not match model {}", manifest.roles, manifest.kind),
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, ParameterSet), CheckpointError> {
    let manifest = load_manifest(dir)?;
    let mut tables = Vec::with_capacity(manifest.roles.len());
    for role in &manifest.roles {
        let rows = if role.is_entity() {
            manifest.entity_count
        } else {
            manifest.relation_count
        };
        let path = table_file(dir, *role);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let expected = rows * manifest.dim * 8;
        if bytes.len() != expected {
            return Err(CheckpointError::TableSize {
                path,
                found: bytes.len(),
                expected,
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tables.push(DenseMatrix::from_vec(rows, manifest.dim, data).expect("length checked"));
    }
    let params = ParameterSet::from_tables(
        manifest.kind,
        manifest.entity_count,
        manifest.relation_count,
        manifest.dim,
        tables,
    )?;
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let p = ParameterSet::random(kind, 9, 3, 5, 17);
            let sub = dir.path().join(kind.name());
            save_checkpoint(&sub, &p, 17, Some("abc")).unwrap();
            let (m, q) = load_checkpoint(&sub).unwrap();
            assert_eq!(m.seed, 17);
            assert_eq!(m.config_hash.as_deref(), Some("abc"));
            assert_eq!(m.roles, kind.roles());
            assert_eq!(p, q);
        }
    }

    #[test]
    fn missing_table_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = ParameterSet::random(ModelKind::DistMult, 4, 2, 3, 1);
        save_checkpoint(dir.path(), &p, 1, None).unwrap();
        fs::remove_file(table_file(dir.path(), Role::Relation)).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("relation.bin"), "{err}");
    }

    #[test]
    fn missing_manifest_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, CheckpointError::MissingFile(_)));
        assert!(err.to_string().contains(MANIFEST_FILE));
    }

    #[test]
    fn truncated_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = ParameterSet::random(ModelKind::ComplEx, 4, 2, 3, 1);
        save_checkpoint(dir.path(), &p, 1, None).unwrap();
        fs::write(table_file(dir.path(), Role::EntityIm), [0u8; 10]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(CheckpointError::TableSize { .. })));
    }

    #[test]
    fn dataset_mismatch() {
        let p = ParameterSet::zeros(ModelKind::TransE, 4, 2, 3);
        let dir = tempfile::tempdir().unwrap();
        let m = save_checkpoint(dir.path(), &p, 0, None).unwrap();
        assert!(m.check_dataset(4, 2).is_ok());
        assert!(matches!(m.check_dataset(5, 2), Err(CheckpointError::DatasetMismatch { .. })));
    }
}
