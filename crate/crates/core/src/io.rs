//! File helpers: atomic writes and 8-bit grayscale PNG.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat};

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn encode_png(width: usize, height: usize, pixels: &[u8]) -> io::Result<Vec<u8>> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "pixel buffer size"))?;
    let mut out = io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(io::Error::other)?;
    Ok(out.into_inner())
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    write_atomic(path, &encode_png(width, height, pixels)?)
}

/// Returns (width, height, pixels). Color images are converted to luma.
pub fn read_png(path: &Path) -> io::Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.png");
        let px: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_png(&p, 4, 3, &px).unwrap();
        assert_eq!(read_png(&p).unwrap(), (4, 3, px));
        assert!(!dir.path().join("sub/x.png.tmp").exists());
    }
}
