//! Per-invocation bookkeeping: input digests, output paths and `run.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct InputRecord {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, InputRecord>,
    outputs: Vec<&'a Path>,
}

/// Tracks what a command read and wrote.
pub struct Run {
    pub command: &'static str,
    pub cfg: RunConfig,
    inputs: BTreeMap<String, PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, cfg: RunConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| qrel::Error::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
        Ok(Run {
            command,
            cfg,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Records an input file under `name` and returns its path.
    pub fn input(&mut self, name: impl Into<String>, path: &Path) -> PathBuf {
        self.inputs.insert(name.into(), path.to_path_buf());
        path.to_path_buf()
    }

    /// A path inside the output directory, recorded as an artifact.
    pub fn output(&mut self, file_name: &str) -> PathBuf {
        let p = self.cfg.out_dir.join(file_name);
        self.outputs.push(p.clone());
        p
    }

    /// Writes `run.json` with the effective config and input digests.
    pub fn finish(self) -> anyhow::Result<()> {
        let mut inputs = BTreeMap::new();
        for (name, path) in &self.inputs {
            inputs.insert(
                name.as_str(),
                InputRecord {
                    path: path.clone(),
                    sha256: sha256_file(path)?,
                },
            );
        }
        let record = RunRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config: &self.cfg,
            inputs,
            outputs: self.outputs.iter().map(PathBuf::as_path).collect(),
        };
        let path = self.cfg.out_dir.join("run.json");
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        write_file(&path, text)
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let io = |e| qrel::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut file = File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| qrel::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .with_context(|| "writing output".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn run_json_lists_inputs_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "").unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().join("out"),
            ..Default::default()
        };
        let mut run = Run::new("stats", cfg).unwrap();
        run.input("dataset", &input);
        let out = run.output("stats.txt");
        run.finish().unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/run.json")).unwrap()).unwrap();
        assert_eq!(v["command"], "stats");
        assert_eq!(v["seed"], 42);
        assert_eq!(
            v["inputs"]["dataset"]["sha256"],
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(v["outputs"][0], out.to_str().unwrap());
    }
}
