use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use latentctl::diffgen::DenseNet;
use latentctl::factor::EncodingModel;
use latentctl::inversion::TrajectoryDataset;
use latentctl::vae::SpriteDataset;
use latentctl::Error;

use crate::error::{CliError, CliResult, StageExt};

pub const MANIFEST_VERSION: u32 = 1;

/// Typed contents of an artifact file, recognised by its leading magic.
#[derive(Clone, Debug)]
pub enum Artifact {
    Trajectories(TrajectoryDataset),
    Sprites(SpriteDataset),
    Network(DenseNet),
    Model(EncodingModel),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Trajectories(_) => "TRJ1",
            Artifact::Sprites(_) => "SPR1",
            Artifact::Network(_) => "DGN1",
            Artifact::Model(_) => "ENC1",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Artifact::Trajectories(d) => d.write_trj1(&mut out).expect("in-memory write"),
            Artifact::Sprites(d) => d.write_spr1(&mut out).expect("in-memory write"),
            Artifact::Network(n) => n.write_dgn1(&mut out).expect("in-memory write"),
            Artifact::Model(m) => out = m.to_text().into_bytes(),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> latentctl::Result<Artifact> {
        match bytes.get(..4) {
            Some(b"TRJ1") => TrajectoryDataset::read_trj1(bytes).map(Artifact::Trajectories),
            Some(b"SPR1") => SpriteDataset::read_spr1(bytes).map(Artifact::Sprites),
            Some(b"DGN1") => DenseNet::read_dgn1(bytes).map(Artifact::Network),
            _ => match std::str::from_utf8(bytes) {
                Ok(text) if text.contains("ENC1") => {
                    EncodingModel::from_text(text).map(Artifact::Model)
                }
                _ => Err(Error::BadMagic {
                    expected: "TRJ1, SPR1, DGN1 or ENC1",
                }),
            },
        }
    }
}

/// Provenance record written next to every output as `<file>.manifest`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactManifest {
    pub kind: String,
    pub version: u32,
    pub command: String,
    /// SHA-256 of the artifact bytes, hex.
    pub sha256: String,
    /// Input role to SHA-256 of the file read for it.
    pub inputs: BTreeMap<String, String>,
    /// Effective run configuration.
    pub config: String,
}

impl ArtifactManifest {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn from_text(text: &str) -> latentctl::Result<Self> {
        let m: Self = toml::from_str(text)
            .map_err(|e| Error::InvariantViolation(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::InvariantViolation(format!(
                "unknown manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Reads a file and, when a manifest sits beside it, checks the recorded hash.
pub fn read_verified(path: &Path) -> CliResult<Vec<u8>> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(CliError::io(&mpath))?;
        let m = ArtifactManifest::from_text(&text).stage("load")?;
        if m.sha256 != sha256_hex(&bytes) {
            return Err(CliError::Stage {
                stage: "load",
                source: Error::InvariantViolation(format!(
                    "{} does not match its manifest hash",
                    path.display()
                )),
            });
        }
    }
    Ok(bytes)
}

/// Loads any artifact, dispatching on its magic.
pub fn load_artifact(path: &Path) -> CliResult<Artifact> {
    let bytes = read_verified(path)?;
    Artifact::from_bytes(&bytes).map_err(|source| CliError::Stage {
        stage: "load",
        source: source.tagged(path.display().to_string()),
    })
}

fn wrong_kind(path: &Path, want: &'static str, got: &Artifact) -> CliError {
    CliError::Stage {
        stage: "load",
        source: Error::InvariantViolation(format!(
            "{}: expected {want}, found {}",
            path.display(),
            got.kind()
        )),
    }
}

pub fn load_trajectories(path: &Path) -> CliResult<TrajectoryDataset> {
    match load_artifact(path)? {
        Artifact::Trajectories(d) => Ok(d),
        other => Err(wrong_kind(path, "TRJ1", &other)),
    }
}

pub fn load_sprites(path: &Path) -> CliResult<SpriteDataset> {
    match load_artifact(path)? {
        Artifact::Sprites(d) => Ok(d),
        other => Err(wrong_kind(path, "SPR1", &other)),
    }
}

pub fn load_network(path: &Path) -> CliResult<DenseNet> {
    match load_artifact(path)? {
        Artifact::Network(n) => Ok(n),
        other => Err(wrong_kind(path, "DGN1", &other)),
    }
}

pub fn load_model(path: &Path) -> CliResult<EncodingModel> {
    match load_artifact(path)? {
        Artifact::Model(m) => Ok(m),
        other => Err(wrong_kind(path, "ENC1", &other)),
    }
}

/// Writes `bytes` to `path` and its manifest beside it.
pub fn write_with_manifest(
    path: &Path,
    kind: &str,
    bytes: &[u8],
    command: &str,
    inputs: &BTreeMap<String, String>,
    config: &str,
) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))?;
    let manifest = ArtifactManifest {
        kind: kind.into(),
        version: MANIFEST_VERSION,
        command: command.into(),
        sha256: sha256_hex(bytes),
        inputs: inputs.clone(),
        config: config.into(),
    };
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest.to_text()).map_err(CliError::io(&mpath))
}
