//! Plain-text density snapshots.
//!
//! ```text
//! # vc-kinetic snapshot v1
//! n_v = 4
//! n_g = 8
//! v_f = 1.0000000000000000e0
//! g_max = 9.0000000000000000e0
//! g_l = ...                      (one line per model parameter)
//! checksum = sha256:<hex>
//! ---
//! <n_v values of row j = 0>
//! <n_v values of row j = 1>
//! ...
//! ```
//!
//! Values carry 17 significant digits, so reading a snapshot back restores
//! every `f64` bit for bit. The checksum covers the text after `---`.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::operators::DensityField;

pub const MAGIC: &str = "# vc-kinetic snapshot v1";
const SEPARATOR: &str = "---";

/// Scientific notation with 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

fn checksum(body: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(body.as_bytes())))
}

pub fn render_snapshot(field: &DensityField, params: &ModelParams) -> String {
    let grid = field.grid();
    let mut body = String::new();
    for j in 0..grid.n_g() {
        let row: Vec<String> = (0..grid.n_v())
            .map(|i| format_value(field.get(i, j)))
            .collect();
        body.push_str(&row.join(" "));
        body.push('\n');
    }
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "n_v = {}", grid.n_v());
    let _ = writeln!(out, "n_g = {}", grid.n_g());
    for (name, value) in [
        ("v_f", grid.v_f()),
        ("g_max", grid.g_max()),
        ("g_l", params.g_l),
        ("v_e", params.v_e),
        ("v_f_model", params.v_f),
        ("sigma_e", params.sigma_e),
        ("g_in", params.g_in),
        ("a", params.a),
    ] {
        let _ = writeln!(out, "{name} = {}", format_value(value));
    }
    let _ = writeln!(out, "checksum = {}", checksum(&body));
    let _ = writeln!(out, "{SEPARATOR}");
    out.push_str(&body);
    out
}

pub fn write_snapshot(path: &Path, field: &DensityField, params: &ModelParams) -> Result<()> {
    std::fs::write(path, render_snapshot(field, params))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub params: ModelParams,
    pub field: DensityField,
}

pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let (head, body) = text
        .split_once(&format!("\n{SEPARATOR}\n"))
        .ok_or_else(|| Error::Parse("snapshot has no data separator".into()))?;
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Parse(
            "snapshot does not start with the expected header".into(),
        ));
    }
    let mut header = std::collections::BTreeMap::new();
    for line in lines {
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Parse(format!("bad header line {line:?}")))?;
        header.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| {
        header
            .get(key)
            .ok_or_else(|| Error::Parse(format!("snapshot header lacks {key}")))
    };
    let int = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("bad integer for {key}")))
    };
    let real = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::Parse(format!("bad number for {key}")))
    };
    let expected = get("checksum")?;
    if &checksum(body) != expected {
        return Err(Error::Parse("snapshot checksum mismatch".into()));
    }
    let params = ModelParams {
        g_l: real("g_l")?,
        v_e: real("v_e")?,
        v_f: real("v_f_model")?,
        sigma_e: real("sigma_e")?,
        g_in: real("g_in")?,
        a: real("a")?,
    };
    let (n_v, n_g) = (int("n_v")?, int("n_g")?);
    let grid = Grid::with_extent(&params, n_v, n_g, real("g_max")?)?;
    let values = body
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad cell value {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Snapshot {
        params,
        field: DensityField::new(grid, values)?,
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    parse_snapshot(&std::fs::read_to_string(path)?)
}
