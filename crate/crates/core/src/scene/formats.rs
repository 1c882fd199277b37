//! Raw binary image (`SLBI`) and segmentation (`SLBS`) files.
//!
//! `SLBI`: magic, version u32, width u32, height u32, then three f32 per
//! pixel row-major. `SLBS`: magic, version, width, height, u16 labels
//! row-major. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::format::{self, FormatError, Reader};
use crate::image::ImageBuf;
use crate::metrics::Segmentation;

use super::Result;

const IMAGE_MAGIC: [u8; 4] = *b"SLBI";
const SEG_MAGIC: [u8; 4] = *b"SLBS";
const VERSION: u32 = 1;

pub fn write_image(image: &ImageBuf, path: &Path) -> Result<()> {
    if image.width == 0 || image.height == 0 {
        return Err(FormatError::InvalidField {
            offset: 8,
            what: format!("empty image {}x{}", image.width, image.height),
        }
        .into());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC)?;
    format::write_u32(&mut w, VERSION)?;
    format::write_u32(&mut w, image.width as u32)?;
    format::write_u32(&mut w, image.height as u32)?;
    format::write_f32_slice(&mut w, &image.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<ImageBuf> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(IMAGE_MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(FormatError::InvalidField {
            offset: at,
            what: format!("empty image {width}x{height}"),
        }
        .into());
    }
    let pixels = r.f32_vec(width * height * 3)?;
    if r.peek_byte()?.is_some() {
        return Err(FormatError::InvalidField {
            offset: r.offset - 1,
            what: "trailing bytes after pixel data".into(),
        }
        .into());
    }
    Ok(ImageBuf { width, height, pixels })
}

pub fn write_segmentation(seg: &Segmentation, path: &Path) -> Result<()> {
    if seg.width == 0 || seg.height == 0 {
        return Err(FormatError::InvalidField {
            offset: 8,
            what: format!("empty segmentation {}x{}", seg.width, seg.height),
        }
        .into());
    }
    if let Some(&bad) = seg.labels.iter().find(|&&l| l > u16::MAX as u32) {
        return Err(FormatError::InvalidField {
            offset: 16,
            what: format!("label {bad} exceeds the u16 range"),
        }
        .into());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SEG_MAGIC)?;
    format::write_u32(&mut w, VERSION)?;
    format::write_u32(&mut w, seg.width as u32)?;
    format::write_u32(&mut w, seg.height as u32)?;
    let labels: Vec<u16> = seg.labels.iter().map(|&l| l as u16).collect();
    format::write_u16_slice(&mut w, &labels)?;
    w.flush()?;
    Ok(())
}

pub fn read_segmentation(path: &Path) -> Result<Segmentation> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(SEG_MAGIC)?;
    r.version(VERSION)?;
    let at = r.offset;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(FormatError::InvalidField {
            offset: at,
            what: format!("empty segmentation {width}x{height}"),
        }
        .into());
    }
    let labels = r.u16_vec(width * height)?;
    if r.peek_byte()?.is_some() {
        return Err(FormatError::InvalidField {
            offset: r.offset - 1,
            what: "trailing bytes after label data".into(),
        }
        .into());
    }
    Ok(Segmentation {
        width,
        height,
        labels: labels.into_iter().map(u32::from).collect(),
    })
}
