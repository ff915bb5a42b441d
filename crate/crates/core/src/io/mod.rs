//! File formats and configuration.

mod binary;
mod config;

use std::path::Path;

pub use binary::{
    decode_cloud, decode_flow, decode_weights, encode_cloud, encode_flow, encode_weights, read_flow,
    read_sfpc, read_weights_file, write_flow, write_sfpc, write_weights_file, CLOUD_MAGIC,
    FLOW_MAGIC, FORMAT_VERSION, WEIGHTS_MAGIC,
};
pub use config::{Config, Precision};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::params::Weights;

/// Parses ASCII `x y z` lines. Blank lines and `#` comments are skipped;
/// extra columns are rejected.
pub fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (a, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.to_path_buf(),
                    location: format!("line {}", i + 1),
                });
            }
            p[a] = v;
        }
        pts.push(p);
    }
    PointCloud::new(pts)
}

/// Reads an SFPC or ASCII `.xyz` cloud. The format is chosen from the magic
/// bytes; files named `*.xyz`/`*.txt` are always parsed as text.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let text_ext = matches!(ext.as_deref(), Some("xyz") | Some("txt"));
    if !text_ext && (bytes.starts_with(CLOUD_MAGIC) || ext.as_deref() == Some("sfpc")) {
        return decode_cloud(path, &bytes);
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) => parse_xyz(path, text),
        Err(_) if text_ext => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "file is not UTF-8 text".into(),
        }),
        // binary but unrecognised: report as a bad SFPC header
        Err(_) => decode_cloud(path, &bytes),
    }
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(cloud.len() * 32);
    for p in cloud.positions() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Loads a PVWT file and checks it against the shapes `config` implies.
pub fn load_weights(path: &Path, config: &Config) -> Result<Weights> {
    Weights::from_named(config, read_weights_file(path)?)
}

pub fn save_weights(path: &Path, weights: &Weights) -> Result<()> {
    write_weights_file(path, &weights.named_tensors())
}
