//! The `.tns` text format.
//!
//! ```text
//! # optional comments
//! tns 3 4 5 6
//! 0 1 2 1.5
//! 3 4 5 -2
//! ```
//!
//! The header gives the mode count and mode sizes; every following line is a
//! 0-based index tuple and a value. Duplicate indices are summed.

use std::fmt::Write as _;
use std::path::Path;

use super::{SparseTensor, Tensor};
use crate::error::{Error, Result};

/// Largest mode count accepted from a file.
pub const MAX_MODES: usize = 64;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_tns(text: &str) -> Result<SparseTensor> {
    let mut dims: Option<Vec<usize>> = None;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match &dims {
            None => {
                if tokens.next() != Some("tns") {
                    return Err(parse_err(lineno, "expected header `tns <q> <n_1> ... <n_q>`"));
                }
                let q: usize = tokens
                    .next()
                    .ok_or_else(|| parse_err(lineno, "missing mode count"))?
                    .parse()
                    .map_err(|_| parse_err(lineno, "mode count is not an integer"))?;
                if q == 0 || q > MAX_MODES {
                    return Err(parse_err(lineno, format!("mode count must be in 1..={MAX_MODES}")));
                }
                let d = tokens
                    .map(|t| {
                        t.parse::<usize>()
                            .ok()
                            .filter(|&n| n > 0)
                            .ok_or_else(|| parse_err(lineno, format!("bad mode size `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if d.len() != q {
                    return Err(parse_err(lineno, format!("header lists {} sizes for {q} modes", d.len())));
                }
                dims = Some(d);
            }
            Some(d) => {
                let q = d.len();
                let toks: Vec<&str> = tokens.collect();
                if toks.len() != q + 1 {
                    return Err(parse_err(lineno, format!("expected {} fields, got {}", q + 1, toks.len())));
                }
                for (m, t) in toks[..q].iter().enumerate() {
                    let i: usize = t
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad index `{t}`")))?;
                    if i >= d[m] {
                        return Err(parse_err(lineno, format!("index {i} out of bounds for mode {m} (size {})", d[m])));
                    }
                    indices.push(i);
                }
                let v: f64 = toks[q]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad value `{}`", toks[q])))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, "value is not finite"));
                }
                values.push(v);
            }
        }
    }
    let dims = dims.ok_or_else(|| parse_err(0, "missing header"))?;
    Ok(SparseTensor::consolidate(dims, indices, values))
}

fn header(dims: &[usize]) -> String {
    let mut s = format!("tns {}", dims.len());
    for d in dims {
        let _ = write!(s, " {d}");
    }
    s.push('\n');
    s
}

pub fn format_sparse(t: &SparseTensor) -> String {
    let mut s = header(t.dims());
    for (idx, v) in t.iter() {
        for i in idx {
            let _ = write!(s, "{i} ");
        }
        let _ = writeln!(s, "{v:?}");
    }
    s
}

/// Lists every entry, zeros included.
pub fn format_dense(t: &Tensor) -> String {
    let mut s = header(t.dims());
    let mut idx = vec![0usize; t.ndim()];
    for &v in t.data() {
        for i in &idx {
            let _ = write!(s, "{i} ");
        }
        let _ = writeln!(s, "{v:?}");
        super::next_index(&mut idx, t.dims());
    }
    s
}

pub fn read_tns(path: &Path) -> Result<SparseTensor> {
    parse_tns(&std::fs::read_to_string(path)?)
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp_name = format!(".{}.tmp{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_sparse(path: &Path, t: &SparseTensor) -> Result<()> {
    write_atomic(path, &format_sparse(t))
}

pub fn write_dense(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &format_dense(t))
}
