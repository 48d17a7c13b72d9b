use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input. Exit code 1.
    Input(String),
    /// Failure after the inputs were accepted. Exit code 2.
    Internal(String),
}

impl CliError {
    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn internal(msg: impl fmt::Display) -> Self {
        CliError::Internal(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

/// Output staged in memory and written only once every artifact is ready.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: Vec<u8>,
}

impl Outputs {
    /// Stages `bytes` for `path`, or for stdout when `path` is `None` or `-`.
    pub fn stage(&mut self, path: Option<&Path>, bytes: Vec<u8>) {
        match path {
            Some(p) if p != Path::new("-") => self.files.push((p.to_path_buf(), bytes)),
            _ => self.stdout.extend(bytes),
        }
    }

    /// Writes each file to a temporary sibling and renames it into place.
    pub fn commit(self) -> Result<(), CliError> {
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let fail = |e: &dyn fmt::Display| CliError::input(format!("cannot write {}: {e}", path.display()));
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
            tmp.write_all(bytes).map_err(|e| fail(&e))?;
            tmp.persist(path).map_err(|e| fail(&e.error))?;
        }
        if !self.stdout.is_empty() {
            let mut out = std::io::stdout().lock();
            out.write_all(&self.stdout).and_then(|_| out.flush()).map_err(CliError::internal)?;
        }
        Ok(())
    }
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn csv_bytes<F, E>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    E: fmt::Display,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(CliError::internal)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::input("x").exit_code(), 1);
        assert_eq!(CliError::internal("x").exit_code(), 2);
    }

    #[test]
    fn commit_writes_files_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let mut out = Outputs::default();
        out.stage(Some(&path), b"{}\n".to_vec());
        out.commit().unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"{}\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_target_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.stage(Some(&dir.path().join("missing/out.json")), vec![1]);
        assert_eq!(out.commit().unwrap_err().exit_code(), 1);
    }
}
