//! Filesystem plumbing shared by the subcommands: atomic writes, input
//! lookup, CSV rendering and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::Profile;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("writing {}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Serializes rows with a header into CSV bytes.
pub fn csv_bytes<R: Serialize>(rows: &[R], header: &[&str]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Serialize)]
struct OutputRecord {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    profile: Profile,
    seed: u64,
    config_path: Option<String>,
    config_sha256: String,
    config: &'a C,
    versions: Versions,
    outputs: &'a [OutputRecord],
    created_unix: u64,
}

#[derive(Debug, Serialize)]
struct Versions {
    spitzkit_core: &'static str,
    spitzkit_cli: &'static str,
    bag_format: u32,
    checkpoint_format: u32,
    clinical_layout: u32,
}

/// State of one command invocation: where to read, where to write, and what
/// has been written so far.
#[derive(Debug)]
pub struct Run {
    pub command: String,
    pub out: PathBuf,
    pub input: PathBuf,
    pub profile: Profile,
    pub seed: u64,
    pub config_path: Option<PathBuf>,
    outputs: Vec<OutputRecord>,
}

impl Run {
    pub fn new(
        command: &str,
        out: PathBuf,
        input: PathBuf,
        profile: Profile,
        seed: u64,
        config_path: Option<PathBuf>,
    ) -> Self {
        Run {
            command: command.to_string(),
            out,
            input,
            profile,
            seed,
            config_path,
            outputs: Vec::new(),
        }
    }

    pub fn input_path(&self, rel: &str) -> PathBuf {
        self.input.join(rel)
    }

    /// Reads `rel` under the input directory; absence is a missing artifact.
    pub fn read(&self, rel: &str, what: &str) -> Result<Vec<u8>, CliError> {
        read_artifact(&self.input_path(rel), what)
    }

    pub fn read_string(&self, rel: &str, what: &str) -> Result<String, CliError> {
        String::from_utf8(self.read(rel, what)?)
            .map_err(|_| CliError::config(format!("{what} is not UTF-8")))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.out.join(rel), bytes)?;
        self.outputs.push(OutputRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Writes `manifests/<name>.json`. The timestamp appears only here.
    pub fn finish<C: Serialize>(mut self, name: &str, config: &C) -> Result<(), CliError> {
        let config_json = serde_json::to_string(config).expect("configs serialize");
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: &self.command,
            profile: self.profile,
            seed: self.seed,
            config_path: self.config_path.as_ref().map(|p| p.display().to_string()),
            config_sha256: sha256_hex(config_json.as_bytes()),
            config,
            versions: Versions {
                spitzkit_core: spitzkit::VERSION,
                spitzkit_cli: env!("CARGO_PKG_VERSION"),
                bag_format: spitzkit::bags::FORMAT_VERSION,
                checkpoint_format: spitzkit::milnet::CHECKPOINT_VERSION,
                clinical_layout: spitzkit::clinical::LAYOUT_VERSION,
            },
            outputs: &self.outputs,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(
            &self.out.join("manifests").join(format!("{name}.json")),
            &bytes,
        )
    }
}

pub fn read_artifact(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact {
            what: what.to_string(),
            path: path.display().to_string(),
            bag_id: None,
        },
        _ => CliError::Io(format!("reading {}: {e}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn missing_input_maps_to_exit_3() {
        let e = read_artifact(Path::new("/nonexistent/x.json"), "split").unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }
}
