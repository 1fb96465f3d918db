//! Small PNG helpers: procedural block images, solid fills, and header probing.

use sha2::{Digest, Sha256};

/// Blocks per side in procedural images.
const GRID: u32 = 8;

/// Gray level of placeholder drafts.
pub const PLACEHOLDER_GRAY: u8 = 128;

pub fn encode_rgb(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), (width * height * 3) as usize);
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        writer.write_image_data(pixels).expect("in-memory PNG data");
    }
    out
}

pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    let pixels: Vec<u8> = rgb
        .iter()
        .copied()
        .cycle()
        .take((width * height * 3) as usize)
        .collect();
    encode_rgb(width, height, &pixels)
}

/// A grid of colored blocks whose colors are derived from `key`.
pub fn blocks(width: u32, height: u32, key: &[u8]) -> Vec<u8> {
    let palette: Vec<[u8; 3]> = (0..GRID * GRID)
        .map(|cell| {
            let mut h = Sha256::new();
            h.update(key);
            h.update(cell.to_le_bytes());
            let d = h.finalize();
            [d[0], d[1], d[2]]
        })
        .collect();
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        let by = (y * GRID / height).min(GRID - 1);
        for x in 0..width {
            let bx = (x * GRID / width).min(GRID - 1);
            pixels.extend_from_slice(&palette[(by * GRID + bx) as usize]);
        }
    }
    encode_rgb(width, height, &pixels)
}

/// Width and height from a PNG header.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let reader = decoder.read_info().ok()?;
    let info = reader.info();
    Some((info.width, info.height))
}

/// Decodes an 8-bit RGB PNG into raw pixels.
pub fn decode_rgb(bytes: &[u8]) -> Option<Vec<u8>> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().ok()?;
    let mut buf = vec![0; reader.output_buffer_size()?];
    let frame = reader.next_frame(&mut buf).ok()?;
    if frame.color_type != png::ColorType::Rgb || frame.bit_depth != png::BitDepth::Eight {
        return None;
    }
    buf.truncate(frame.buffer_size());
    Some(buf)
}
