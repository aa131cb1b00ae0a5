use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::hex;
use crate::tensor::Tensor;

/// RGB image with values in `[0, 1]`, stored as an `[h, w, 3]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    tensor: Tensor,
}

impl Image {
    /// Fails unless the tensor is `[h, w, 3]` with every value in `[0, 1]`.
    pub fn new(tensor: Tensor) -> Result<Self> {
        check_rgb(&tensor)?;
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { tensor })
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub fn clamped(tensor: Tensor) -> Result<Self> {
        check_rgb(&tensor)?;
        let tensor = tensor.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Ok(Image { tensor })
    }

    pub(crate) fn from_tensor_unchecked(tensor: Tensor) -> Self {
        Image { tensor }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(Tensor::full(&[height, width, 3], value))
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    /// Hex SHA-256 of the dimensions and pixel values.
    pub fn sha256_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height() as u64).to_le_bytes());
        h.update((self.width() as u64).to_le_bytes());
        h.update(self.tensor.to_le_bytes());
        hex(&h.finalize())
    }
}

fn check_rgb(t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::shape("image", format!("expected [h, w, 3], got {s:?}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for a peak of 1; capped at 99 dB.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Encodes a binary PPM (`P6`, maxval 255), clamping and rounding to the
/// nearest code.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, (usize, String)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, "expected a decimal number".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| (start, "number out of range".into()))
    }
}

/// Decodes a binary PPM. `source` only labels errors.
pub fn decode_ppm(bytes: &[u8], source: &Path) -> Result<Image> {
    let parse = |offset: usize, reason: String| Error::Parse { path: source.to_path_buf(), offset, reason };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::UnsupportedFormat(format!("{}: expected binary PPM (P6), found {shown:?}", source.display())));
    }
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number().map_err(|(o, r)| parse(o, r))?;
    let height = c.number().map_err(|(o, r)| parse(o, r))?;
    let maxval = c.number().map_err(|(o, r)| parse(o, r))?;
    if width == 0 || height == 0 {
        return Err(parse(c.pos, format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("{}: maxval {maxval} (only 8-bit PPM)", source.display())));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(parse(c.pos, "expected one whitespace byte after the header".into())),
    }
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| parse(c.pos, "image dimensions overflow".into()))?;
    let raster = &bytes[c.pos..];
    if raster.len() < n {
        return Err(parse(bytes.len(), format!("raster truncated: {} of {n} bytes", raster.len())));
    }
    let scale = maxval as f64;
    let data: Vec<f64> = raster[..n].iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    Ok(Image::from_tensor_unchecked(Tensor::new(&[height, width, 3], data)?))
}

/// Reads a PPM file.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

/// Writes a PPM file; any extension other than `.ppm` is rejected.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ppm") => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: cannot write `{}` images, only .ppm",
                path.display(),
                other.unwrap_or("")
            )))
        }
    }
    std::fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Image {
        Image::new(Tensor::new(&[h, w, 3], (0..h * w * 3).map(f).collect()).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_within_half_quantum() {
        let a = img(5, 7, |i| ((i * 37) % 101) as f64 / 100.0);
        let b = decode_ppm(&encode_ppm(&a), Path::new("mem")).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()) <= 1.0 / 510.0 + 1e-15);
    }

    #[test]
    fn black_round_trips_exactly() {
        let a = Image::filled(3, 4, 0.0).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&a), Path::new("mem")).unwrap(), a);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P6 # made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0]);
        let im = decode_ppm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(im.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn truncated_and_foreign_files() {
        let full = encode_ppm(&Image::filled(4, 4, 0.5).unwrap());
        match decode_ppm(&full[..full.len() - 5], Path::new("t.ppm")) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, full.len() - 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_ppm(b"P6\n4 x\n255\n", Path::new("t.ppm")), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(decode_ppm(b"\x89PNG\r\n", Path::new("t.png")), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n", Path::new("t.ppm")), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn range_is_enforced() {
        assert!(Image::new(Tensor::full(&[2, 2, 3], 1.5)).is_err());
        assert_eq!(Image::clamped(Tensor::full(&[2, 2, 3], 1.5)).unwrap().data()[0], 1.0);
        assert!(Image::new(Tensor::zeros(&[2, 2, 1])).is_err());
    }

    #[test]
    fn psnr_cap_and_value() {
        let a = Tensor::full(&[2, 2, 3], 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = Tensor::full(&[2, 2, 3], 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }
}
