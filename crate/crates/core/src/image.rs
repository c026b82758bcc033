//! 8-bit images and binary Netpbm (P5/P6) IO.

use std::path::Path;

use crate::numerics::Tensor;
use crate::{write_atomic, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

pub type Rgb = [u8; 3];

pub const BLACK: Rgb = [0, 0, 0];

/// Interleaved 8-bit raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: Channels,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: Channels, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * channels.count() {
            return Err(Error::Format(format!(
                "{width}x{height} {:?} image needs {} bytes, got {}",
                channels,
                width * height * channels.count(),
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let pixels = (0..width * height).flat_map(|_| color).collect();
        Self { width, height, channels: Channels::Rgb, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb(&self, x: usize, y: usize) -> Rgb {
        let i = y * self.width + x;
        match self.channels {
            Channels::Gray => [self.pixels[i]; 3],
            Channels::Rgb => [self.pixels[3 * i], self.pixels[3 * i + 1], self.pixels[3 * i + 2]],
        }
    }

    /// Paints the axis-aligned rectangle, clipped to the image. Gray images
    /// take the mean of the color.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: Rgb) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                let i = y * self.width + x;
                match self.channels {
                    Channels::Gray => {
                        self.pixels[i] = ((color[0] as u16 + color[1] as u16 + color[2] as u16) / 3) as u8
                    }
                    Channels::Rgb => self.pixels[3 * i..3 * i + 3].copy_from_slice(&color),
                }
            }
        }
    }

    /// `[3×H×W]` tensor with values mapped by `x/127.5 − 1`. Gray input is
    /// replicated across the three channels.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let px = self.rgb(x, y);
                for c in 0..3 {
                    data[c * h * w + y * w + x] = px[c] as f64 / 127.5 - 1.0;
                }
            }
        }
        Tensor::new(vec![3, h, w], data).expect("image tensor shape")
    }

    /// Binary Netpbm encoding: P5 for gray, P6 for RGB, maxval 255.
    pub fn encode_netpbm(&self) -> Vec<u8> {
        let magic = match self.channels {
            Channels::Gray => "P5",
            Channels::Rgb => "P6",
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_netpbm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => Channels::Gray,
            "P6" => Channels::Rgb,
            other => return Err(Error::Format(format!("unsupported netpbm magic {other:?}"))),
        };
        let width = header_number(bytes, &mut pos)?;
        let height = header_number(bytes, &mut pos)?;
        let maxval = header_number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::Format(format!("maxval must be 255, got {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Format("image has a zero dimension".into()));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(Error::Format("missing raster separator".into())),
        }
        let need = width * height * channels.count();
        let raster = bytes.get(pos..pos + need).ok_or_else(|| Error::Format("truncated raster".into()))?;
        Self::new(width, height, channels, raster.to_vec())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode_netpbm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode_netpbm())
    }
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while let Some(&b) = bytes.get(*pos) {
        if b == b'#' {
            while let Some(&c) = bytes.get(*pos) {
                *pos += 1;
                if c == b'\n' {
                    break;
                }
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while let Some(&b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() || b == b'#' {
            break;
        }
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse().map_err(|_| Error::Format(format!("bad netpbm header field {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let mut img = Image::filled(5, 3, BLACK);
        img.fill_rect(1, 1, 2, 2, [255, 10, 20]);
        let back = Image::decode_netpbm(&img.encode_netpbm()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.rgb(2, 2), [255, 10, 20]);
    }

    #[test]
    fn pgm_with_comment_and_gray_replication() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = Image::decode_netpbm(&bytes).unwrap();
        assert_eq!(img.channels(), Channels::Gray);
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn rejects_other_magics_and_maxvals() {
        assert!(Image::decode_netpbm(b"P3\n1 1\n255\n0 0 0\n").is_err());
        assert!(Image::decode_netpbm(b"P2\n1 1\n255\n0\n").is_err());
        assert!(Image::decode_netpbm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(Image::decode_netpbm(b"P6\n2 2\n255\n\0\0\0").is_err());
    }
}
