//! Result-file envelope: a comment header carrying provenance, followed by
//! CSV or JSON content.
//!
//! Files round-trip parse -> emit byte-identically. The only field allowed
//! to differ between identical runs is `duration_ms`, which is confined to
//! its own header line so determinism checks can strip it.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const FORMAT_TAG: &str = "fna-result v1";

/// Library version stamped into every output.
pub fn library_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Fixed 17-significant-digit float formatting: '.' decimal separator,
/// no locale dependence, exact f64 round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Provenance header plus verbatim body lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub duration_ms: u64,
    /// Content lines (CSV header + rows, or JSON text) without trailing
    /// newline bookkeeping; emitted one per line.
    pub body: Vec<String>,
}

impl Envelope {
    pub fn new(command: &str, config_hash: &str, duration_ms: u64) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            version: library_version().into(),
            duration_ms,
            body: Vec::new(),
        }
    }

    pub fn push_line(&mut self, line: impl Into<String>) {
        self.body.push(line.into());
    }

    /// CSV row from already-formatted cells.
    pub fn push_row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        self.body.push(cells.into_iter().collect::<Vec<_>>().join(","));
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# {FORMAT_TAG}").unwrap();
        writeln!(out, "# command: {}", self.command).unwrap();
        writeln!(out, "# config_hash: {}", self.config_hash).unwrap();
        writeln!(out, "# version: {}", self.version).unwrap();
        writeln!(out, "# duration_ms: {}", self.duration_ms).unwrap();
        for line in &self.body {
            writeln!(out, "{line}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let expect = |line: Option<&str>, prefix: &str| -> Result<String> {
            let line = line.with_context(|| format!("missing header line '{prefix}'"))?;
            line.strip_prefix(prefix)
                .map(str::to_owned)
                .with_context(|| format!("expected '{prefix}', got '{line}'"))
        };
        let tag = expect(lines.next(), "# ")?;
        if tag != FORMAT_TAG {
            bail!("unknown result format '{tag}'");
        }
        let command = expect(lines.next(), "# command: ")?;
        let config_hash = expect(lines.next(), "# config_hash: ")?;
        let version = expect(lines.next(), "# version: ")?;
        let duration_ms = expect(lines.next(), "# duration_ms: ")?
            .parse()
            .context("duration_ms is not an integer")?;
        Ok(Self {
            command,
            config_hash,
            version,
            duration_ms,
            body: lines.map(str::to_owned).collect(),
        })
    }

    /// Everything except the timestamp line, for determinism comparisons.
    pub fn stable_bytes(&self) -> String {
        let mut clone = self.clone();
        clone.duration_ms = 0;
        clone.emit()
    }
}

/// Write atomically: a temporary file in the same directory is renamed over
/// the final path only after the full content is flushed.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().context("output path has no parent")?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_byte_identical() {
        let mut env = Envelope::new("spectrum", "deadbeef", 1234);
        env.push_line("index,lambda");
        env.push_row([fmt_f64(0.0), fmt_f64(1.5)]);
        env.push_row([fmt_f64(1.0), fmt_f64(std::f64::consts::PI)]);
        let text = env.emit();
        let parsed = Envelope::parse(&text).unwrap();
        assert_eq!(parsed.emit(), text);
        assert_eq!(parsed.duration_ms, 1234);
        // Stable bytes remove only the duration.
        let mut env2 = env.clone();
        env2.duration_ms = 9999;
        assert_eq!(env.stable_bytes(), env2.stable_bytes());
        assert_ne!(env.emit(), env2.emit());
    }

    #[test]
    fn float_format_roundtrips_exactly() {
        for &x in &[
            0.0,
            -1.5,
            std::f64::consts::PI,
            3.12e-5,
            f64::MIN_POSITIVE,
            1.0 / 3.0,
            -2.2250738585072014e-308,
        ] {
            let s = fmt_f64(x);
            assert!(!s.contains(','));
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s}");
        }
    }

    #[test]
    fn rejects_malformed_header() {
        assert!(Envelope::parse("garbage").is_err());
        assert!(Envelope::parse("# fna-result v1\n# command: x\n").is_err());
    }
}
