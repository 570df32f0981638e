//! Output writers. CSV files start with `#` header lines; JSON documents
//! carry the same fields in a `header` object.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Header {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Header {
    pub fn new(command: &str, config_hash: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    fn csv_lines(&self) -> String {
        let mut s = format!(
            "# xnorsim {} {}\n# config_hash: {}\n",
            self.command, self.version, self.config_hash
        );
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed: {seed}\n"));
        }
        s
    }
}

fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub fn write_csv(out: Option<&Path>, header: &Header, body: &[u8]) -> Result<()> {
    let mut bytes = header.csv_lines().into_bytes();
    bytes.extend_from_slice(body);
    write_bytes(out, &bytes)
}

pub fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(out, text.as_bytes())
}
