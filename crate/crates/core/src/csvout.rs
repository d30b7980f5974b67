//! CSV emission with bit-exact formatting.
//!
//! Numbers are written with 17 significant digits ('.' separator, LF line
//! endings) so that identical runs diff byte-identically across platforms.
//! Every document ends with a metadata comment line recording the tool
//! version, a stable hash of the configuration, and the master seed.

use std::fmt::Write as _;
use std::path::Path;

/// 17-significant-digit scientific rendering.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Stable FNV-1a 64-bit hash, used to fingerprint configurations.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// In-memory CSV document.
#[derive(Debug, Clone)]
pub struct CsvDoc {
    header: String,
    lines: Vec<String>,
}

impl CsvDoc {
    pub fn new(columns: &[&str]) -> Self {
        CsvDoc {
            header: columns.join(","),
            lines: Vec::new(),
        }
    }

    pub fn push_row(&mut self, fields: &[String]) {
        self.lines.push(fields.join(","));
    }

    /// Free-form comment line (leading `# `).
    pub fn push_comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    /// Renders the document, appending the trailing metadata comment.
    pub fn render(&self, config_hash: u64, master_seed: u64) -> String {
        let mut out = String::new();
        out.push_str(&self.header);
        out.push('\n');
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "# tool_version={} config_hash={config_hash:016x} master_seed={master_seed}",
            env!("CARGO_PKG_VERSION")
        );
        out
    }
}

/// Writes via a temporary file in the same directory plus rename, so a failed
/// run leaves no partial output behind.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp",
            path.file_name().unwrap_or_default().to_string_lossy()
        )),
        None => std::path::PathBuf::from(format!(
            ".{}.tmp",
            path.file_name().unwrap_or_default().to_string_lossy()
        )),
    };
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
