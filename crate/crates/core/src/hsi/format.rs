//! On-disk formats.
//!
//! HSB container, little-endian throughout:
//!
//! | bytes  | content                                          |
//! |--------|--------------------------------------------------|
//! | 0..4   | magic `HSB1`                                     |
//! | 4..8   | height `H` (u32)                                 |
//! | 8..12  | width `W` (u32)                                  |
//! | 12..16 | bands `L` (u32)                                  |
//! | 16..20 | flags; bit 0 clear = f32 payload, set = f64      |
//! | 20..   | `H·W·L` values, band-sequential, row-major per band |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AbundanceStack, EndmemberMatrix, HsiCube};
use crate::error::{Error, Result};
use crate::fmt::sig9;

const HSB_MAGIC: &[u8; 4] = b"HSB1";
const HSB_HEADER: usize = 20;
const FLAG_F64: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeFormat {
    Hsb,
    Csv,
}

impl CubeFormat {
    /// Guesses from the extension; anything but `.csv` is HSB.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CubeFormat::Csv,
            _ => CubeFormat::Hsb,
        }
    }
}

/// Payload precision for HSB output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

pub fn load_cube(path: &Path, format: CubeFormat) -> Result<HsiCube> {
    match format {
        CubeFormat::Hsb => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_hsb(&bytes, path)
        }
        CubeFormat::Csv => load_cube_csv(path),
    }
}

pub fn save_cube(cube: &HsiCube, path: &Path, format: CubeFormat, precision: Precision) -> Result<()> {
    let bytes = match format {
        CubeFormat::Hsb => encode_hsb(cube, precision),
        CubeFormat::Csv => cube_csv(cube).into_bytes(),
    };
    write_file(path, &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn encode_hsb(cube: &HsiCube, precision: Precision) -> Vec<u8> {
    let (h, w, l) = (cube.height(), cube.width(), cube.bands());
    let width = if precision == Precision::F64 { 8 } else { 4 };
    let mut out = Vec::with_capacity(HSB_HEADER + h * w * l * width);
    out.extend_from_slice(HSB_MAGIC);
    for dim in [h, w, l] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    let flags = if precision == Precision::F64 { FLAG_F64 } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for b in 0..l {
        for p in 0..h * w {
            let v = cube.data()[p * l + b];
            match precision {
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

fn decode_hsb(bytes: &[u8], path: &Path) -> Result<HsiCube> {
    if bytes.len() < HSB_HEADER {
        if bytes.len() >= 4 && &bytes[..4] != HSB_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "HSB1",
            });
        }
        return Err(Error::Truncated {
            path: path.into(),
            expected: HSB_HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != HSB_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "HSB1",
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let (h, w, l, flags) = (word(4), word(8), word(12), word(16));
    let dims = vec![h as u64, w as u64, l as u64];
    let width: u64 = if flags & FLAG_F64 != 0 { 8 } else { 4 };
    let expected = (h as u64)
        .checked_mul(w as u64)
        .and_then(|v| v.checked_mul(l as u64))
        .and_then(|v| v.checked_mul(width))
        .filter(|_| h > 0 && w > 0 && l > 0)
        .filter(|&v| usize::try_from(v).is_ok())
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.into(),
            dims: dims.clone(),
        })?;
    let found = (bytes.len() - HSB_HEADER) as u64;
    if found < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            detail: format!("{} trailing bytes after payload", found - expected),
        });
    }
    let (h, w, l) = (h as usize, w as usize, l as usize);
    let payload = &bytes[HSB_HEADER..];
    let mut data = vec![0.0; h * w * l];
    for b in 0..l {
        for p in 0..h * w {
            let i = b * h * w + p;
            data[p * l + b] = if width == 8 {
                f64::from_le_bytes(payload[i * 8..i * 8 + 8].try_into().expect("8 bytes"))
            } else {
                f32::from_le_bytes(payload[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64
            };
        }
    }
    HsiCube::new(h, w, l, data)
}

fn pixel_table(header_prefix: &str, h: usize, w: usize, k: usize, value: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from("row,col");
    for j in 0..k {
        out.push_str(&format!(",{header_prefix}{j}"));
    }
    out.push('\n');
    for r in 0..h {
        for c in 0..w {
            out.push_str(&format!("{r},{c}"));
            for j in 0..k {
                out.push(',');
                out.push_str(&sig9(value(r * w + c, j)));
            }
            out.push('\n');
        }
    }
    out
}

fn cube_csv(cube: &HsiCube) -> String {
    pixel_table("band", cube.height(), cube.width(), cube.bands(), |p, b| cube.spectrum_at(p)[b])
}

/// `row,col,em0,…` with one line per pixel, 9 significant digits.
pub fn abundance_csv(stack: &AbundanceStack) -> String {
    pixel_table("em", stack.height(), stack.width(), stack.count(), |p, j| stack.pixel(p)[j])
}

pub fn write_abundance_csv(stack: &AbundanceStack, path: &Path) -> Result<()> {
    write_file(path, abundance_csv(stack).as_bytes())
}

/// `band,em0,…` with one line per band, 9 significant digits.
pub fn write_endmember_csv(m: &EndmemberMatrix, path: &Path) -> Result<()> {
    let names: Vec<String> = (0..m.count()).map(|j| format!("em{j}")).collect();
    write_named_endmember_csv(m, &names, path)
}

/// [`write_endmember_csv`] with material names as column headers.
pub fn write_named_endmember_csv(m: &EndmemberMatrix, names: &[String], path: &Path) -> Result<()> {
    if names.len() != m.count() {
        return Err(Error::InvalidArgument(format!("{} names for {} endmembers", names.len(), m.count())));
    }
    if let Some(n) = names.iter().find(|n| n.is_empty() || n.contains([',', '\n', '\r'])) {
        return Err(Error::InvalidArgument(format!("material name {n:?} is empty or contains a comma or newline")));
    }
    let mut out = String::from("band");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for l in 0..m.bands() {
        out.push_str(&l.to_string());
        for j in 0..m.count() {
            out.push(',');
            out.push_str(&sig9(m.get(l, j)));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

struct Table {
    columns: usize,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path, first_header: &str) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.into(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let columns = header.split(',').count();
    if !header.starts_with(first_header) || columns < 2 {
        return Err(parse_err(1, format!("expected header starting with `{first_header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(parse_err(i + 1, format!("expected {columns} fields, found {}", fields.len())));
        }
        let row = fields
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| parse_err(i + 1, format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Reads a `row,col,v0,…` table into `(height, width, channels, data)`.
fn read_pixel_table(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let table = read_table(path, "row,col")?;
    let k = table.columns - 2;
    if k == 0 || table.rows.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            detail: "no value columns or no rows".into(),
        });
    }
    let h = table.rows.iter().map(|r| r[0] as usize).max().unwrap_or(0) + 1;
    let w = table.rows.iter().map(|r| r[1] as usize).max().unwrap_or(0) + 1;
    if table.rows.len() != h * w {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            detail: format!("{} rows do not cover a {h}x{w} grid", table.rows.len()),
        });
    }
    let mut data = vec![f64::NAN; h * w * k];
    for row in &table.rows {
        let p = row[0] as usize * w + row[1] as usize;
        data[p * k..(p + 1) * k].copy_from_slice(&row[2..]);
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse {
            path: path.into(),
            line: 0,
            detail: "duplicate or missing pixels".into(),
        });
    }
    Ok((h, w, k, data))
}

fn load_cube_csv(path: &Path) -> Result<HsiCube> {
    let (h, w, l, data) = read_pixel_table(path)?;
    HsiCube::new(h, w, l, data)
}

pub fn read_abundance_csv(path: &Path) -> Result<AbundanceStack> {
    let (h, w, p, data) = read_pixel_table(path)?;
    AbundanceStack::new(h, w, p, data)
}

/// Column headers after `band` in an endmember CSV.
pub fn read_endmember_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let mut fields = header.split(',').map(|f| f.trim().to_string());
    match fields.next() {
        Some(first) if first == "band" => Ok(fields.collect()),
        _ => Err(Error::Parse {
            path: path.into(),
            line: 1,
            detail: "expected header starting with `band`".into(),
        }),
    }
}

pub fn read_endmember_csv(path: &Path) -> Result<EndmemberMatrix> {
    let table = read_table(path, "band")?;
    let p = table.columns - 1;
    let bands = table.rows.len();
    let mut data = vec![0.0; bands * p];
    for (i, row) in table.rows.iter().enumerate() {
        if row[0] as usize != i {
            return Err(Error::Parse {
                path: path.into(),
                line: i + 2,
                detail: format!("expected band {i}"),
            });
        }
        data[i * p..(i + 1) * p].copy_from_slice(&row[1..]);
    }
    EndmemberMatrix::new(bands, p, data)
}
