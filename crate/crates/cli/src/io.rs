//! Grid export and re-import: CSV (full precision) and binary PGM.

use rfscope::erf::Grid2;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// Writes a grid as CSV: one row per frequency bin, time along the
/// columns, `.` decimal point, LF line endings, shortest round-trip float
/// formatting so a re-read reproduces the grid bit-exactly.
pub fn write_grid_csv(path: &Path, grid: &Grid2) -> io::Result<()> {
    let mut out = String::new();
    for f in 0..grid.freq {
        for t in 0..grid.time {
            if t > 0 {
                out.push(',');
            }
            write!(out, "{}", grid.at(f, t)).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads a grid written by [`write_grid_csv`].
pub fn read_grid_csv(path: &Path) -> io::Result<Grid2> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut time = 0usize;
    let mut freq = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", lineno + 1))
        })?;
        if freq == 0 {
            time = row.len();
        } else if row.len() != time {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: expected {} columns, found {}", lineno + 1, time, row.len()),
            ));
        }
        data.extend(row);
        freq += 1;
    }
    Ok(Grid2 { freq, time, data })
}

/// Writes a grid as a binary (P5) PGM with maxval 255, linearly quantizing
/// values from `[0, 1]`. Rows are frequency bins, columns time frames.
pub fn write_grid_pgm(path: &Path, grid: &Grid2) -> io::Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", grid.time, grid.freq).into_bytes();
    bytes.extend(grid.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_full_precision() {
        let grid = Grid2 {
            freq: 2,
            time: 3,
            data: vec![0.1, 1.0 / 3.0, 9.0, 1e-300, 0.0, 0.123456789012345678],
        };
        let dir = std::env::temp_dir().join("rfscope_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.csv");
        write_grid_csv(&path, &grid).unwrap();
        let back = read_grid_csv(&path).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn pgm_header_and_quantization() {
        let grid = Grid2 { freq: 1, time: 2, data: vec![0.0, 1.0] };
        let dir = std::env::temp_dir().join("rfscope_io_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("grid.pgm");
        write_grid_pgm(&path, &grid).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 2..], &[0u8, 255u8]);
    }
}
