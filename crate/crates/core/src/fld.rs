//! `FLD1` field snapshot files.
//!
//! Layout: one ASCII header line
//! `FLD1 n_x n_y dx dy origin_x origin_y field_count`, one line of
//! space-separated field names, then for each field `n_x * n_y`
//! little-endian `f64` values in row-major cell order.
//!
//! The land mask is not part of the header; by convention it may be stored
//! as a field named `land` holding 0/1 values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::domain::{GridSpec, Point, ScalarField};
use crate::error::{Error, Result};

pub const MAGIC: &str = "FLD1";
pub const LAND_FIELD: &str = "land";

/// Named fields on one grid as read back from disk.
#[derive(Debug, Clone)]
pub struct FieldSet {
    pub grid: GridSpec,
    pub fields: Vec<(String, ScalarField)>,
}

impl FieldSet {
    pub fn get(&self, name: &str) -> Option<&ScalarField> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn require(&self, name: &str) -> Result<&ScalarField> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("field `{name}` missing from FLD1 file")))
    }
}

pub fn write_fields<W: Write>(mut w: W, grid: &GridSpec, fields: &[(&str, &ScalarField)]) -> Result<()> {
    for (name, f) in fields {
        f.check_grid(grid)?;
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("invalid field name `{name}`")));
        }
    }
    let o = grid.origin();
    writeln!(
        w,
        "{MAGIC} {} {} {} {} {} {} {}",
        grid.nx(),
        grid.ny(),
        grid.dx(),
        grid.dy(),
        o.x,
        o.y,
        fields.len()
    )?;
    let names: Vec<&str> = fields.iter().map(|(n, _)| *n).collect();
    writeln!(w, "{}", names.join(" "))?;
    for (_, f) in fields {
        let mut buf = Vec::with_capacity(f.values().len() * 8);
        for v in f.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file(path: impl AsRef<Path>, grid: &GridSpec, fields: &[(&str, &ScalarField)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_fields(std::io::BufWriter::new(file), grid, fields)
}

pub fn read_fields<R: Read>(r: R) -> Result<FieldSet> {
    let mut r = BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 8 || parts[0] != MAGIC {
        return Err(Error::Format(format!("bad FLD1 header `{}`", header.trim_end())));
    }
    let num = |k: usize| -> Result<f64> {
        parts[k]
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("header field {k}: {e}")))
    };
    let int = |k: usize| -> Result<usize> {
        parts[k]
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("header field {k}: {e}")))
    };
    let (nx, ny, count) = (int(1)?, int(2)?, int(7)?);
    let grid = GridSpec::new(nx, ny, num(3)?, num(4)?, Point::new(num(5)?, num(6)?))?;
    let mut names_line = String::new();
    r.read_line(&mut names_line)?;
    let names: Vec<String> = names_line.split_whitespace().map(str::to_owned).collect();
    if names.len() != count {
        return Err(Error::Format(format!(
            "header declares {count} fields but names line has {}",
            names.len()
        )));
    }
    let n = nx * ny;
    let mut buf = vec![0u8; n * 8];
    let mut fields = Vec::with_capacity(count);
    for name in names {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("field `{name}` truncated: {e}")))?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        fields.push((name, ScalarField::from_values(&grid, values)?));
    }
    // Re-attach the land mask when present.
    let grid = match fields.iter().find(|(n, _)| n == LAND_FIELD) {
        Some((_, land)) => GridSpec::with_land(
            grid.nx(),
            grid.ny(),
            grid.dx(),
            grid.dy(),
            grid.origin(),
            land.values().iter().map(|&v| v > 0.5).collect(),
        )?,
        None => grid,
    };
    Ok(FieldSet { grid, fields })
}

pub fn read_file(path: impl AsRef<Path>) -> Result<FieldSet> {
    read_fields(std::fs::File::open(path)?)
}

/// Land mask as a 0/1 field for persistence.
pub fn land_field(grid: &GridSpec) -> ScalarField {
    let values = grid.land_mask().iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    ScalarField::from_values(grid, values).expect("mask matches grid")
}
