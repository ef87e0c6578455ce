//! Multi-page grayscale TIFF reading and writing. Page order is depth order.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::image::{Plane, Volume, DEFAULT_VOXEL_SIZE_UM};

/// Sample type written to disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputDtype {
    Float32,
    /// Values are clipped to [0, 65535] and rounded.
    Uint16,
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut decoder = Decoder::new(BufReader::new(File::open(path)?))?;
    let mut arrays = Vec::new();
    let mut expected = None;
    loop {
        match decoder.colortype()? {
            ColorType::Gray(8 | 16 | 32) => {}
            ColorType::Gray(bits) => {
                return Err(Error::UnsupportedFormat(format!("{bits}-bit grayscale")))
            }
            ColorType::RGB(_) => return Err(Error::UnsupportedChannels(3)),
            ColorType::RGBA(_) | ColorType::CMYK(_) => return Err(Error::UnsupportedChannels(4)),
            ColorType::GrayA(_) => return Err(Error::UnsupportedChannels(2)),
            other => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        }
        let (w, h) = decoder.dimensions()?;
        let dim = (h as usize, w as usize);
        let page = arrays.len();
        match expected {
            None => expected = Some(dim),
            Some(e) if e != dim => {
                return Err(Error::InconsistentPages {
                    page,
                    got: dim,
                    expected: e,
                })
            }
            _ => {}
        }
        let data: Vec<f32> = match decoder.read_image()? {
            DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::F32(v) => v,
            _ => return Err(Error::UnsupportedFormat("sample format".into())),
        };
        let array = Array2::from_shape_vec(dim, data)
            .map_err(|e| Error::UnsupportedFormat(format!("page {page}: {e}")))?;
        arrays.push(array);
        if !decoder.more_images() {
            break;
        }
        decoder.next_image()?;
    }
    let planes = arrays
        .into_iter()
        .enumerate()
        .map(|(i, a)| Plane::new(a, i))
        .collect::<Result<Vec<_>>>()?;
    Volume::new(planes, DEFAULT_VOXEL_SIZE_UM)
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>, dtype: OutputDtype) -> Result<()> {
    let arrays: Vec<&Array2<f32>> = volume.planes().iter().map(Plane::pixels).collect();
    write_arrays(&arrays, path, dtype)
}

/// Writes a stack of arrays, e.g. intermediate results that are not valid
/// planes.
pub fn write_arrays(arrays: &[&Array2<f32>], path: impl AsRef<Path>, dtype: OutputDtype) -> Result<()> {
    let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path.as_ref())?))?;
    for a in arrays {
        let (h, w) = a.dim();
        let data: Vec<f32> = a.iter().copied().collect();
        match dtype {
            OutputDtype::Float32 => {
                encoder.write_image::<colortype::Gray32Float>(w as u32, h as u32, &data)?
            }
            OutputDtype::Uint16 => {
                let data: Vec<u16> = data.iter().map(|&v| to_u16(v)).collect();
                encoder.write_image::<colortype::Gray16>(w as u32, h as u32, &data)?
            }
        }
    }
    Ok(())
}

/// Writes binary masks as uint8 pages holding 0 or 255.
pub fn write_masks(masks: &[Array2<bool>], path: impl AsRef<Path>) -> Result<()> {
    let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path.as_ref())?))?;
    for m in masks {
        let (h, w) = m.dim();
        let data: Vec<u8> = m.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encoder.write_image::<colortype::Gray8>(w as u32, h as u32, &data)?;
    }
    Ok(())
}

/// Reads uint8 mask pages; any nonzero value is foreground.
pub fn read_masks(path: impl AsRef<Path>) -> Result<Vec<Array2<bool>>> {
    let volume = read_volume(path)?;
    Ok(volume
        .planes()
        .iter()
        .map(|p| p.pixels().mapv(|v| v != 0.0))
        .collect())
}

fn to_u16(v: f32) -> u16 {
    v.round().clamp(0.0, u16::MAX as f32) as u16
}
