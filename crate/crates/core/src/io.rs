//! Observation files, grayscale PGM images and float-safe serialization.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Parses a single-column CSV of observations. A first row that does not
/// parse as a number is taken as a header.
pub fn parse_observations(text: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            offset: e.position().map_or(0, |p| p.byte() as usize),
            msg: e.to_string(),
        })?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 1 {
            return Err(Error::Parse { offset, msg: format!("expected one column, found {}", rec.len()) });
        }
        match rec[0].parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => {}
            _ => return Err(Error::Parse { offset, msg: format!("not a finite number: {:?}", &rec[0]) }),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(out)
}

pub fn read_observations(path: &Path) -> Result<Vec<f64>> {
    parse_observations(&std::fs::read_to_string(path)?)
}

/// One value per line under a `y` header, in shortest round-trip form.
pub fn format_observations(data: &[f64]) -> String {
    let mut s = String::from("y\n");
    for v in data {
        s.push_str(&format!("{v}\n"));
    }
    s
}

/// Pretty JSON for any serializable report.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T> {
    Ok(serde_json::from_str(s)?)
}

/// Serde helper writing non-finite floats as the strings `"inf"`, `"-inf"`
/// and `"nan"`, which plain JSON cannot hold.
pub mod float_or_string {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("not a number: {s}"))),
            },
        }
    }
}

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Parameter(format!(
                "{} pixels do not fill a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, maxval: 255, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.pixels.chunks(self.width).map(|r| r.to_vec()).collect()
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, msg: msg.into() }
    }

    fn skip_space(&mut self) {
        while self.pos < self.b.len() {
            match self.b[self.pos] {
                b'#' => {
                    while self.pos < self.b.len() && self.b[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<u64> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.b.len() && self.b[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        if self.pos < self.b.len() && !self.b[self.pos].is_ascii_whitespace() && self.b[self.pos] != b'#' {
            return Err(self.err(format!("unexpected byte in {what}")));
        }
        std::str::from_utf8(&self.b[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { offset: start, msg: format!("{what} out of range") })
    }
}

/// Parses a P2 (ASCII) or P5 (binary) PGM with `maxval <= 255`.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut c = Cursor { b: bytes, pos: 0 };
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(c.err("expected magic number P2 or P5")),
    };
    c.pos = 2;
    if c.pos < bytes.len() && !bytes[c.pos].is_ascii_whitespace() && bytes[c.pos] != b'#' {
        return Err(c.err("expected whitespace after the magic number"));
    }
    let width = c.uint("width")? as usize;
    let height = c.uint("height")? as usize;
    let maxval_at = {
        c.skip_space();
        c.pos
    };
    let maxval = c.uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse { offset: maxval_at, msg: "image has no pixels".into() });
    }
    if maxval == 0 {
        return Err(Error::Parse { offset: maxval_at, msg: "maxval must be positive".into() });
    }
    if maxval > 255 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval} (only 8-bit images are read)")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Parse { offset: 0, msg: "image size overflows".into() })?;
    let mut pixels = Vec::with_capacity(n.min(1 << 26));
    if binary {
        if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
            return Err(c.err("expected one whitespace byte before the raster"));
        }
        c.pos += 1;
        let end = c.pos + n;
        if end > bytes.len() {
            c.pos = bytes.len();
            return Err(c.err(format!("raster truncated: {} of {n} bytes", bytes.len() - (end - n))));
        }
        for (i, &v) in bytes[c.pos..end].iter().enumerate() {
            if u64::from(v) > maxval {
                return Err(Error::Parse { offset: c.pos + i, msg: format!("sample {v} exceeds maxval") });
            }
        }
        pixels.extend_from_slice(&bytes[c.pos..end]);
    } else {
        for _ in 0..n {
            c.skip_space();
            let at = c.pos;
            let v = c.uint("pixel value")?;
            if v > maxval {
                return Err(Error::Parse { offset: at, msg: format!("sample {v} exceeds maxval") });
            }
            pixels.push(v as u8);
        }
        c.skip_space();
        if c.pos < bytes.len() {
            return Err(c.err("trailing data after the raster"));
        }
    }
    Ok(GrayImage { width, height, maxval: maxval as u8, pixels })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    parse_pgm(&std::fs::read(path)?)
}

/// Encodes as P5 (`binary`) or P2.
pub fn encode_pgm(img: &GrayImage, binary: bool) -> Vec<u8> {
    let mut out = format!(
        "{}\n{} {}\n{}\n",
        if binary { "P5" } else { "P2" },
        img.width,
        img.height,
        img.maxval
    )
    .into_bytes();
    if binary {
        out.extend_from_slice(&img.pixels);
    } else {
        for row in img.pixels.chunks(img.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage, binary: bool) -> Result<()> {
    std::fs::write(path, encode_pgm(img, binary))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observations_with_and_without_header() {
        assert_eq!(parse_observations("y\n1\n2\n\n3\n").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_observations("4\n5").unwrap(), vec![4.0, 5.0]);
        match parse_observations("y\n1\nx\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_observations("y\n"), Err(Error::EmptyData)));
        assert!(parse_observations("1,2\n").is_err());
    }

    #[test]
    fn observations_round_trip() {
        let d = vec![0.1, 1e-300, 12345.678901234567, 3.0];
        assert_eq!(parse_observations(&format_observations(&d)).unwrap(), d);
    }

    #[test]
    fn ascii_pgm() {
        let img = parse_pgm(b"P2 2 2 255 0 100 200 255").unwrap();
        assert_eq!(img.rows(), vec![vec![0, 100], vec![200, 255]]);
    }

    #[test]
    fn binary_pgm_matches_ascii() {
        let mut b = b"P5\n# comment\n2 2\n255\n".to_vec();
        b.extend_from_slice(&[0, 100, 200, 255]);
        assert_eq!(parse_pgm(&b).unwrap(), parse_pgm(b"P2 2 2 255 0 100 200 255").unwrap());
    }

    #[test]
    fn sixteen_bit_unsupported() {
        assert!(matches!(parse_pgm(b"P2 1 1 65535 7"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn errors_name_offsets() {
        match parse_pgm(b"P2 2 2 255 0 1 x 3") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 15),
            other => panic!("{other:?}"),
        }
        match parse_pgm(b"P3 1 1 255 0") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match parse_pgm(b"P5 2 2 255\n\x01\x02") {
            Err(Error::Parse { offset, msg }) => assert!(offset == 13 && msg.contains("truncated"), "{offset} {msg}"),
            other => panic!("{other:?}"),
        }
        assert!(parse_pgm(b"P2 1 1 10 11").is_err());
        assert!(parse_pgm(b"P2 1 1 255 1 2").is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        for bin in [true, false] {
            assert_eq!(parse_pgm(&encode_pgm(&img, bin)).unwrap(), img);
        }
    }

    #[test]
    fn non_finite_floats_survive_json() {
        #[derive(Serialize, Deserialize, Debug)]
        struct W {
            #[serde(with = "float_or_string")]
            x: f64,
        }
        for v in [f64::INFINITY, f64::NEG_INFINITY, 0.1] {
            let s = serde_json::to_string(&W { x: v }).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap().x, v);
        }
        let s = serde_json::to_string(&W { x: f64::NAN }).unwrap();
        assert!(serde_json::from_str::<W>(&s).unwrap().x.is_nan());
    }
}
