use std::fs;
use std::path::{Path, PathBuf};

use super::format::{write_abundance_csv, write_file};
use super::AbundanceStack;
use crate::error::{Error, Result};

pub const ABUNDANCE_CSV: &str = "abundances.csv";

/// Binary (P5) 8-bit PGM of a row-major map with values in `[0, 1]`,
/// quantized as `floor(255·v + 0.5)`.
pub fn write_pgm(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::shape("write_pgm", format!("{} values for {height}x{width}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "abundance value {v} outside [0, 1]; clamp before export"
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| (255.0 * v + 0.5).floor() as u8));
    write_file(path, &bytes)
}

/// Writes `em{j}.pgm` for every endmember plus `abundances.csv` into `dir`.
/// Returns the written paths, images first.
pub fn save_abundance_maps(stack: &AbundanceStack, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(stack.count() + 1);
    for j in 0..stack.count() {
        let path = dir.join(format!("em{j}.pgm"));
        write_pgm(&stack.channel(j), stack.height(), stack.width(), &path)?;
        written.push(path);
    }
    let csv = dir.join(ABUNDANCE_CSV);
    write_abundance_csv(stack, &csv)?;
    written.push(csv);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(path: &Path) -> Vec<u8> {
        let bytes = fs::read(path).unwrap();
        let header_end = bytes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == b'\n')
            .nth(2)
            .unwrap()
            .0;
        bytes[header_end + 1..].to_vec()
    }

    #[test]
    fn quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&[1.0; 4], 2, 2, &p).unwrap();
        assert_eq!(pixels(&p), vec![255; 4]);
        write_pgm(&[0.5; 4], 2, 2, &p).unwrap();
        assert_eq!(pixels(&p), vec![128; 4]);
        write_pgm(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], 2, 2, &p).unwrap();
        assert_eq!(pixels(&p), vec![0, 85, 170, 255]);
        assert!(fs::read(&p).unwrap().starts_with(b"P5\n2 2\n255\n"));
    }

    #[test]
    fn out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_pgm(&[1.2], 1, 1, &dir.path().join("x.pgm")).is_err());
        assert!(write_pgm(&[-0.01], 1, 1, &dir.path().join("x.pgm")).is_err());
    }

    #[test]
    fn one_image_per_endmember() {
        let dir = tempfile::tempdir().unwrap();
        let stack = AbundanceStack::uniform(3, 4, 3);
        let files = save_abundance_maps(&stack, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        assert!(files.iter().all(|f| f.exists()));
    }
}
