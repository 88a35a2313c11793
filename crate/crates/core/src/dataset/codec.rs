//! PNG codecs: indexed-palette masks (pixel value = object id) and RGB frames.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::dataset::{Mask, RgbImage};
use crate::error::{format_err, Error, Result};

/// The PASCAL VOC / DAVIS colour map.
pub fn palette() -> [u8; 768] {
    let mut out = [0u8; 768];
    for i in 0..256usize {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= (((c >> 0) & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        out[i * 3] = r;
        out[i * 3 + 1] = g;
        out[i * 3 + 2] = b;
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    format_err(path, e.to_string())
}

/// Writes a single-channel 8-bit indexed PNG.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    if let Some(&bad) = mask.labels().iter().find(|&&l| l > 255) {
        return Err(Error::Unsupported(format!("object id {bad} does not fit an 8-bit palette mask")));
    }
    let bytes: Vec<u8> = mask.labels().iter().map(|&l| l as u8).collect();
    let mut enc = png::Encoder::new(create(path)?, mask.width() as u32, mask.height() as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette().to_vec());
    let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
    w.write_image_data(&bytes).map_err(|e| encode_err(path, e))?;
    w.finish().map_err(|e| encode_err(path, e))?;
    Ok(())
}

fn decode(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut dec = png::Decoder::new(BufReader::new(File::open(path)?));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Reads an 8-bit indexed or greyscale PNG as object ids.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let (info, buf) = decode(path)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, format!("expected 8-bit mask, got {:?}", info.bit_depth)));
    }
    match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => return Err(format_err(path, format!("expected indexed mask, got {other:?}"))),
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        labels.extend(row[..w].iter().map(|&b| b as u16));
    }
    Mask::from_labels(w, h, labels)
}

pub fn save_frame(image: &RgbImage, path: &Path) -> Result<()> {
    let mut enc = png::Encoder::new(create(path)?, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
    w.write_image_data(image.raw()).map_err(|e| encode_err(path, e))?;
    w.finish().map_err(|e| encode_err(path, e))?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<RgbImage> {
    let (info, buf) = decode(path)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, format!("expected 8-bit frame, got {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => return Err(format_err(path, format!("unsupported frame colour type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * channels].chunks(channels) {
            if channels == 1 {
                data.extend_from_slice(&[px[0]; 3]);
            } else {
                data.extend_from_slice(&px[..3]);
            }
        }
    }
    RgbImage::from_raw(w, h, data)
}
