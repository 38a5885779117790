use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::args::ReplayArgs;
use super::{CliError, CliResult};

pub const MANIFEST_SCHEMA: &str = "gmsp.manifest.v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a run: the effective argument vector, the
/// resolved configuration, and digests of what went in and came out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn start(command: &str, argv: &[String], config: serde_json::Value, seed: u64) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            argv: argv.to_vec(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now(),
            finished_unix: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input file; its argument is rewritten to an absolute path so
    /// the run can be replayed from any directory.
    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        let mut recorded = path.to_path_buf();
        if path != Path::new("-") {
            if let Ok(abs) = fs::canonicalize(path) {
                let raw = path.to_string_lossy();
                for a in self.argv.iter_mut().skip(1) {
                    if *a == raw {
                        *a = abs.to_string_lossy().into_owned();
                    }
                }
                recorded = abs;
            }
        }
        self.inputs.push(FileDigest { path: recorded, sha256: sha256_hex(bytes) });
    }

    pub fn record_output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.push(FileDigest { path: path.to_path_buf(), sha256: sha256_hex(bytes) });
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(now());
    }
}

/// Arguments of `argv` with the output directory and config file removed.
fn strip_run_location(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out-dir" || a == "--config" {
            skip = true;
            continue;
        }
        if a.starts_with("--out-dir=") || a.starts_with("--config=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

pub fn replay(args: &ReplayArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|source| CliError::Io { context: format!("reading {}", args.manifest.display()), source })?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Replay(format!("{}: {e}", args.manifest.display())))?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(CliError::Replay(format!("unsupported manifest schema `{}`", manifest.schema)));
    }
    for input in &manifest.inputs {
        if input.path == Path::new("-") {
            return Err(CliError::Replay("the recorded run read standard input; it cannot be replayed".into()));
        }
        let bytes = fs::read(&input.path)
            .map_err(|source| CliError::Io { context: format!("reading {}", input.path.display()), source })?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(CliError::Replay(format!("input {} has changed since the recorded run", input.path.display())));
        }
    }
    if let Some(o) = manifest.outputs.iter().find(|o| o.path.is_absolute()) {
        return Err(CliError::Replay(format!("output {} was written outside the run directory", o.path.display())));
    }
    let into = match &args.into {
        Some(p) => p.clone(),
        None => args.manifest.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    let mut argv = strip_run_location(&manifest.argv);
    argv.push(format!("--out-dir={}", into.display()));
    let code = super::run(argv);
    if code != super::EXIT_OK {
        return Err(CliError::Replay(format!("re-run exited with status {code}")));
    }
    let mut mismatched = Vec::new();
    for o in &manifest.outputs {
        if o.path == Path::new("-") {
            println!("skipped  -  (standard output)");
            continue;
        }
        let path = into.join(&o.path);
        let digest = fs::read(&path).map(|b| sha256_hex(&b)).unwrap_or_default();
        if digest == o.sha256 {
            println!("match    {}", o.path.display());
        } else {
            println!("MISMATCH {}", o.path.display());
            mismatched.push(o.path.display().to_string());
        }
    }
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::Replay(format!("{} output(s) differ: {}", mismatched.len(), mismatched.join(", "))))
    }
}
