//! PNG (8-bit) and PFM (f32) image files.
//!
//! Both store the composited rgb channels; opacity is dropped and reads
//! back as 1.

use std::io::Cursor;
use std::path::Path;

use fvsrn_core::image::Image;

use crate::error::{Error, IoContext, Result};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Image(e.to_string()))?;
        let rgb: Vec<u8> = image
            .data()
            .chunks_exact(4)
            .flat_map(|p| [to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
            .collect();
        writer
            .write_image_data(&rgb)
            .map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(e.to_string()))?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * 4);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        let rgb = match channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        };
        data.extend(rgb.iter().map(|&v| v as f32 / 255.0));
        data.push(1.0);
    }
    Ok(Image::from_data(w, h, data)?)
}

pub fn encode_pfm(image: &Image) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            let p = image.pixel(x, y);
            for c in &p[..3] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    // Three whitespace-terminated header tokens after the magic line.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::format(0, "bad PFM magic")),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(3, format!("bad PFM size {s:?}")))
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f32 = fields[3]
        .parse()
        .map_err(|_| Error::format(pos, "bad PFM scale"))?;
    let need = w * h * channels * 4;
    if bytes.len() < pos + need {
        return Err(Error::format(bytes.len(), "truncated PFM payload"));
    }
    let read = |i: usize| {
        let b: [u8; 4] = bytes[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap();
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut image = Image::new(w, h);
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            let base = (row * w + x) * channels;
            let rgb = if channels == 3 {
                [read(base), read(base + 1), read(base + 2)]
            } else {
                [read(base); 3]
            };
            image.set_pixel(x, y, [rgb[0], rgb[1], rgb[2], 1.0]);
        }
    }
    Ok(image)
}

pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => encode_pfm(image),
        _ => encode_png(image)?,
    };
    std::fs::write(path, bytes).at(path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).at(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => decode_pfm(&bytes),
        _ => decode_png(&bytes),
    }
}
