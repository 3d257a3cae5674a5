//! Grayscale PFM (`Pf`) I/O plus 8-bit PNG previews.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Encodes `grid` as little-endian `Pf` bytes (scale −1.0, bottom row first).
///
/// Values are stored as `f32`; any value that is not finite after narrowing
/// is an error.
pub fn encode_pfm(grid: &Grid) -> Result<Vec<u8>> {
    let narrowed: Vec<f32> = grid.as_slice().iter().map(|&v| v as f32).collect();
    let bad = narrowed.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFinite { count: bad });
    }
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for v in &narrowed[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Grid> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    // Three whitespace-separated header tokens after the magic, then exactly
    // one whitespace byte before the raster.
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    match token()?.as_str() {
        "Pf" => {}
        "PF" => return Err(err("colour PFM is not supported".into())),
        other => return Err(err(format!("bad magic {other:?}"))),
    }
    let w: usize = token()?.parse().map_err(|_| err("bad width".into()))?;
    let h: usize = token()?.parse().map_err(|_| err("bad height".into()))?;
    let scale: f32 = token()?.parse().map_err(|_| err("bad scale".into()))?;
    let data_start = pos + 1;
    let need = w * h * 4;
    if bytes.len() < data_start + need {
        return Err(err(format!(
            "expected {need} raster bytes, found {}",
            bytes.len().saturating_sub(data_start)
        )));
    }
    let raster = &bytes[data_start..data_start + need];
    let mut data = vec![0.0f64; w * h];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (i / w, i % w);
        data[(h - 1 - row) * w + col] = v as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn write_pfm(grid: &Grid, path: &Path) -> Result<()> {
    let bytes = encode_pfm(grid)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Grid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// 8-bit preview normalised to the grid's `[min, max]`.
pub fn write_preview_png(grid: &Grid, path: &Path) -> Result<()> {
    let (lo, hi) = grid.min_max();
    let span = hi - lo;
    let pixels: Vec<u8> = grid
        .as_slice()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    image::save_buffer(
        path,
        &pixels,
        grid.width() as u32,
        grid.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn preview_path(pfm_path: &Path) -> PathBuf {
    pfm_path.with_extension("png")
}

/// Writes `map` as PFM and a PNG preview next to it (same stem, `.png`).
/// Nothing is written when the map holds non-finite values.
pub fn write_depth(map: &Grid, path: &Path) -> Result<()> {
    let bad = map.count_non_finite();
    if bad > 0 {
        return Err(Error::NonFinite { count: bad });
    }
    write_pfm(map, path)?;
    write_preview_png(map, &preview_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_depth(&g, &path).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back, g);
        assert!(preview_path(&path).exists());
    }

    #[test]
    fn raster_is_stored_bottom_row_first() {
        let g = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_pfm(&g).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let first = f32::from_le_bytes(bytes[header.len()..header.len() + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn one_nan_is_reported_and_nothing_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let g = Grid::from_vec(2, 2, vec![1.0, f64::NAN, 3.0, 4.0]).unwrap();
        let err = write_depth(&g, &path).unwrap_err();
        assert_eq!(err.to_string(), "1 non-finite pixel");
        assert!(!path.exists());
    }

    #[test]
    fn file_size_is_raster_plus_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.pfm");
        let g = Grid::new(512, 512, 0.5);
        write_depth(&g, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(2).unwrap().0 + 1;
        assert_eq!(header_len, "Pf\n512 512\n-1.0\n".len());
        assert_eq!(bytes.len(), 512 * 512 * 4 + header_len);
    }

    #[test]
    fn big_endian_files_are_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        let g = decode_pfm(&bytes, Path::new("be.pfm")).unwrap();
        assert_eq!(g.get(0, 0), 2.5);
    }

    proptest! {
        #[test]
        fn pfm_roundtrip_is_bit_exact(
            w in 1usize..9, h in 1usize..9,
            seed in prop::collection::vec(-1e30f32..1e30f32, 64)
        ) {
            let data: Vec<f64> = (0..w * h).map(|i| seed[i % 64] as f64).collect();
            let g = Grid::from_vec(w, h, data).unwrap();
            let back = decode_pfm(&encode_pfm(&g).unwrap(), Path::new("p")).unwrap();
            for (a, b) in g.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
