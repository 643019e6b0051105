//! `.duc` text clouds.
//!
//! ```text
//! duc v1 <N> <d> <has_labels 0|1>
//! x y z f1 .. fd [label]      (N rows)
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a write/read
//! cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const EXTENSION: &str = "duc";

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = String::new();
    let has_labels = cloud.labels.is_some();
    let _ = writeln!(s, "duc v1 {} {} {}", cloud.len(), cloud.feature_dim, u8::from(has_labels));
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        for f in cloud.feature(i) {
            let _ = write!(s, " {f}");
        }
        if let Some(l) = &cloud.labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, format_cloud(cloud))?;
    Ok(())
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file, expected a `duc v1` header".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "duc" || h[1] != "v1" {
        return Err(err(1, format!("expected `duc v1 N d has_labels`, got `{header}`")));
    }
    let n: usize = h[2].parse().map_err(|_| err(1, format!("bad point count `{}`", h[2])))?;
    let d: usize = h[3].parse().map_err(|_| err(1, format!("bad feature width `{}`", h[3])))?;
    let has_labels = match h[4] {
        "0" => false,
        "1" => true,
        other => return Err(err(1, format!("has_labels must be 0 or 1, got `{other}`"))),
    };
    let cols = 3 + d + usize::from(has_labels);
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = has_labels.then(|| Vec::with_capacity(n));
    let mut rows = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(err(ln, format!("more than the {n} rows announced in the header")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cols {
            return Err(err(ln, format!("expected {cols} columns, got {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(ln, format!("bad number `{s}`")));
        positions.push([num(fields[0])?, num(fields[1])?, num(fields[2])?]);
        for f in &fields[3..3 + d] {
            features.push(num(f)?);
        }
        if let Some(l) = labels.as_mut() {
            let s = fields[cols - 1];
            l.push(s.parse().map_err(|_| err(ln, format!("bad label `{s}`")))?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(err(text.lines().count() + 1, format!("expected {n} rows, found {rows}")));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PointCloud::new(name, positions, features, d, labels).map_err(|e| err(1, e.to_string()))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_cloud(&text, path)
}

/// All `.duc` files in `dir`, sorted by file name.
pub fn read_dataset(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Argument(format!("no .{EXTENSION} files in {}", dir.display())));
    }
    files.iter().map(|p| read_cloud(p)).collect()
}

/// Writes `<dir>/<name>.duc` for every cloud, creating `dir` if needed.
pub fn write_dataset(clouds: &[PointCloud], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    clouds
        .iter()
        .map(|c| {
            let p = dir.join(format!("{}.{EXTENSION}", c.name));
            write_cloud(c, &p)?;
            Ok(p)
        })
        .collect()
}
