//! Line-delimited JSON artifacts. Files written here start with a header
//! line `{"header": {...}}`; hand-written input files may omit it.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub artifact: String,
    pub format_version: u32,
    /// SHA-256 over the stage's input files and settings.
    pub inputs_sha256: String,
    pub backend: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<T> {
    header: T,
}

/// Incremental hash of named inputs.
#[derive(Debug, Clone, Default)]
pub struct InputHash(Sha256);

impl InputHash {
    pub fn new() -> Self {
        Self::default()
    }

    fn part(&mut self, name: &str, bytes: &[u8]) {
        self.0.update((name.len() as u64).to_le_bytes());
        self.0.update(name.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    pub fn file(mut self, name: &str, path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.part(name, &bytes);
        Ok(self)
    }

    pub fn value<T: Serialize>(mut self, name: &str, value: &T) -> Self {
        let bytes = serde_json::to_vec(value).expect("settings serialize");
        self.part(name, &bytes);
        self
    }

    pub fn text(mut self, name: &str, text: &str) -> Self {
        self.part(name, text.as_bytes());
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Writes through a temporary file so a crash never leaves half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    header: &Header,
    records: &[T],
) -> Result<(), CliError> {
    let mut buf = serde_json::to_vec(&HeaderLine { header })?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Header>, Vec<T>), CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine<Header>>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let record = serde_json::from_str(&line).map_err(|e| CliError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    header: Header,
    #[serde(flatten)]
    body: T,
}

/// Pretty JSON object with the header as its first field.
pub fn write_json<T: Serialize>(path: &Path, header: &Header, body: &T) -> Result<(), CliError> {
    let mut buf = serde_json::to_vec_pretty(&Document {
        header: header.clone(),
        body,
    })?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(Header, T), CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: Document<T> = serde_json::from_str(&text).map_err(|e| CliError::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok((doc.header, doc.body))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Header {
        Header {
            artifact: "t".into(),
            format_version: FORMAT_VERSION,
            inputs_sha256: InputHash::new().text("a", "b").finish(),
            backend: "mock".into(),
            seed: 0,
        }
    }

    #[test]
    fn jsonl_round_trip_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/y.jsonl");
        write_jsonl(&path, &header(), &[1, 2, 3]).unwrap();
        let (h, v): (_, Vec<i32>) = read_jsonl(&path).unwrap();
        assert_eq!(h, Some(header()));
        assert_eq!(v, [1, 2, 3]);

        fs::write(&path, "{\"a\":1}\n\n{\"a\":2}\n").unwrap();
        let (h, v): (_, Vec<serde_json::Value>) = read_jsonl(&path).unwrap();
        assert!(h.is_none());
        assert_eq!(v.len(), 2);

        fs::write(&path, "{\"a\":1}\nnot json\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Body {
            n: u32,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json(&path, &header(), &Body { n: 4 }).unwrap();
        let (h, b): (_, Body) = read_json(&path).unwrap();
        assert_eq!((h, b), (header(), Body { n: 4 }));
    }

    #[test]
    fn hash_separates_parts() {
        let a = InputHash::new().text("x", "ab").text("y", "c").finish();
        let b = InputHash::new().text("x", "a").text("y", "bc").finish();
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
