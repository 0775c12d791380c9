//! Binary array files: a short text header followed by a raw payload.
//!
//! ```text
//! PMACE-ARRAY 1
//! kind=complex64-pair
//! shape=5,7
//! byte_order=little-endian
//! layout=row-major
//! end
//! <payload>
//! ```
//!
//! `complex64-pair` elements are interleaved `(re, im)` pairs of 64-bit
//! floats. The payload is little-endian and row-major; its length must be
//! exactly `product(shape) × element size`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use pmace_core::{ComplexImage, RealImage, C64};

const MAGIC: &str = "PMACE-ARRAY 1";
const MAX_HEADER: usize = 4096;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ArrayError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("zero-size dimension in shape {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("shape {0:?} overflows the addressable size")]
    ShapeOverflow(Vec<usize>),
    #[error("payload has {found} bytes, expected {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("expected {expected}, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Complex64Pair,
    Float32,
    Float64,
}

impl ElementKind {
    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Complex64Pair => "complex64-pair",
            ElementKind::Float32 => "float32",
            ElementKind::Float64 => "float64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementKind::Complex64Pair => 16,
            ElementKind::Float32 => 4,
            ElementKind::Float64 => 8,
        }
    }

    fn parse(s: &str) -> Result<Self, ArrayError> {
        match s {
            "complex64-pair" => Ok(ElementKind::Complex64Pair),
            "float32" => Ok(ElementKind::Float32),
            "float64" => Ok(ElementKind::Float64),
            other => Err(ArrayError::Unsupported(format!("element kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Complex(ArrayD<C64>),
    Float32(ArrayD<f32>),
    Float64(ArrayD<f64>),
}

impl ArrayData {
    pub fn kind(&self) -> ElementKind {
        match self {
            ArrayData::Complex(_) => ElementKind::Complex64Pair,
            ArrayData::Float32(_) => ElementKind::Float32,
            ArrayData::Float64(_) => ElementKind::Float64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::Complex(a) => a.shape(),
            ArrayData::Float32(a) => a.shape(),
            ArrayData::Float64(a) => a.shape(),
        }
    }

    pub fn from_complex_image(x: &ComplexImage) -> Self {
        ArrayData::Complex(x.clone().into_dyn())
    }

    pub fn from_real_image(x: &RealImage) -> Self {
        ArrayData::Float64(x.clone().into_dyn())
    }

    /// Stacks equally shaped real images into a `(J, rows, cols)` array.
    pub fn from_real_stack(frames: &[RealImage]) -> Result<Self, ArrayError> {
        let (rows, cols) = frames
            .first()
            .map(|f| f.dim())
            .ok_or_else(|| ArrayError::ZeroDimension(vec![0]))?;
        let mut flat = Vec::with_capacity(frames.len() * rows * cols);
        for f in frames {
            if f.dim() != (rows, cols) {
                return Err(ArrayError::MalformedHeader("frames differ in shape".into()));
            }
            flat.extend(f.iter().copied());
        }
        let a = ArrayD::from_shape_vec(IxDyn(&[frames.len(), rows, cols]), flat)
            .expect("length matches shape");
        Ok(ArrayData::Float64(a))
    }

    pub fn into_complex_image(self) -> Result<ComplexImage, ArrayError> {
        match self {
            ArrayData::Complex(a) => a.into_dimensionality().map_err(|_| ArrayError::WrongKind {
                expected: "2-D array".into(),
                found: "other rank".into(),
            }),
            other => Err(ArrayError::WrongKind {
                expected: "complex64-pair".into(),
                found: other.kind().name().into(),
            }),
        }
    }

    /// Real 2-D image; float32 input is widened.
    pub fn into_real_image(self) -> Result<RealImage, ArrayError> {
        let a = self.into_real()?;
        a.into_dimensionality().map_err(|_| ArrayError::WrongKind {
            expected: "2-D array".into(),
            found: "other rank".into(),
        })
    }

    /// Splits a real `(J, rows, cols)` array into `J` frames.
    pub fn into_real_stack(self) -> Result<Vec<RealImage>, ArrayError> {
        let a = self.into_real()?;
        if a.ndim() != 3 {
            return Err(ArrayError::WrongKind {
                expected: "3-D array".into(),
                found: format!("{}-D", a.ndim()),
            });
        }
        let (rows, cols) = (a.shape()[1], a.shape()[2]);
        Ok(a.outer_iter()
            .map(|f| {
                Array2::from_shape_vec((rows, cols), f.iter().copied().collect())
                    .expect("frame shape")
            })
            .collect())
    }

    fn into_real(self) -> Result<ArrayD<f64>, ArrayError> {
        match self {
            ArrayData::Float64(a) => Ok(a),
            ArrayData::Float32(a) => Ok(a.mapv(f64::from)),
            ArrayData::Complex(_) => Err(ArrayError::WrongKind {
                expected: "real array".into(),
                found: "complex64-pair".into(),
            }),
        }
    }
}

pub fn encode(data: &ArrayData) -> Vec<u8> {
    let shape: Vec<String> = data.shape().iter().map(|d| d.to_string()).collect();
    let header = format!(
        "{MAGIC}\nkind={}\nshape={}\nbyte_order=little-endian\nlayout=row-major\nend\n",
        data.kind().name(),
        shape.join(",")
    );
    let mut out = header.into_bytes();
    // iter() on a standard-layout array visits elements in row-major order
    match data {
        ArrayData::Complex(a) => a.iter().for_each(|z| {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }),
        ArrayData::Float32(a) => a
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        ArrayData::Float64(a) => a
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ArrayData, ArrayError> {
    let (header, payload) = split_header(bytes)?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(ArrayError::MalformedHeader("missing magic line".into()));
    }
    let (mut kind, mut shape, mut order, mut layout) = (None, None, None, None);
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ArrayError::MalformedHeader(format!("line {line:?}")))?;
        let slot = match key {
            "kind" => &mut kind,
            "shape" => &mut shape,
            "byte_order" => &mut order,
            "layout" => &mut layout,
            other => {
                return Err(ArrayError::MalformedHeader(format!(
                    "unknown key {other:?}"
                )))
            }
        };
        if slot.replace(value).is_some() {
            return Err(ArrayError::MalformedHeader(format!(
                "duplicate key {key:?}"
            )));
        }
    }
    let missing = |k: &str| ArrayError::MalformedHeader(format!("missing {k}"));
    let kind = ElementKind::parse(kind.ok_or_else(|| missing("kind"))?)?;
    match order.ok_or_else(|| missing("byte_order"))? {
        "little-endian" => {}
        other => return Err(ArrayError::Unsupported(format!("byte order {other:?}"))),
    }
    match layout.ok_or_else(|| missing("layout"))? {
        "row-major" => {}
        other => return Err(ArrayError::Unsupported(format!("layout {other:?}"))),
    }
    let shape = parse_shape(shape.ok_or_else(|| missing("shape"))?)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| ArrayError::ShapeOverflow(shape.clone()))?;
    let expected = count
        .checked_mul(kind.size())
        .ok_or_else(|| ArrayError::ShapeOverflow(shape.clone()))?;
    if payload.len() != expected {
        return Err(ArrayError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let dim = IxDyn(&shape);
    let data = match kind {
        ElementKind::Complex64Pair => ArrayData::Complex(
            ArrayD::from_shape_vec(
                dim,
                payload
                    .chunks_exact(16)
                    .map(|c| C64::new(f64_le(&c[..8]), f64_le(&c[8..])))
                    .collect(),
            )
            .expect("payload length checked"),
        ),
        ElementKind::Float32 => ArrayData::Float32(
            ArrayD::from_shape_vec(
                dim,
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            )
            .expect("payload length checked"),
        ),
        ElementKind::Float64 => ArrayData::Float64(
            ArrayD::from_shape_vec(dim, payload.chunks_exact(8).map(f64_le).collect())
                .expect("payload length checked"),
        ),
    };
    Ok(data)
}

fn f64_le(c: &[u8]) -> f64 {
    f64::from_le_bytes(c.try_into().expect("8 bytes"))
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8]), ArrayError> {
    let terminator = b"\nend\n";
    let search = &bytes[..bytes.len().min(MAX_HEADER)];
    let pos = search
        .windows(terminator.len())
        .position(|w| w == terminator)
        .ok_or_else(|| ArrayError::MalformedHeader("no end line".into()))?;
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| ArrayError::MalformedHeader("header is not UTF-8".into()))?;
    Ok((header, &bytes[pos + terminator.len()..]))
}

fn parse_shape(s: &str) -> Result<Vec<usize>, ArrayError> {
    let shape = s
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ArrayError::MalformedHeader(format!("shape {s:?}")))?;
    if shape.is_empty() {
        return Err(ArrayError::MalformedHeader("empty shape".into()));
    }
    if shape.contains(&0) {
        return Err(ArrayError::ZeroDimension(shape));
    }
    Ok(shape)
}

pub fn write_array(path: &Path, data: &ArrayData) -> Result<(), ArrayError> {
    fs::write(path, encode(data)).map_err(|e| ArrayError::Io(e.to_string()))
}

pub fn read_array(path: &Path) -> Result<ArrayData, ArrayError> {
    decode(&fs::read(path).map_err(|e| ArrayError::Io(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complex_5x7() -> ArrayData {
        let a = Array2::from_shape_fn((5, 7), |(i, j)| {
            C64::new(i as f64 * 0.1 - 1e-300, (j as f64).sqrt() * 1e7)
        });
        ArrayData::from_complex_image(&a)
    }

    #[test]
    fn complex_round_trip_is_bit_exact() {
        let data = complex_5x7();
        let back = decode(&encode(&data)).unwrap();
        let (ArrayData::Complex(a), ArrayData::Complex(b)) = (&data, &back) else {
            panic!()
        };
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }

    #[test]
    fn real_kinds_round_trip() {
        let f32s = ArrayData::Float32(
            ArrayD::from_shape_vec(
                IxDyn(&[2, 3]),
                vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.0, 4.0, 5.0],
            )
            .unwrap(),
        );
        assert_eq!(decode(&encode(&f32s)).unwrap(), f32s);
        let stack = ArrayData::from_real_stack(&[
            Array2::from_elem((2, 2), 1.0),
            Array2::from_elem((2, 2), 2.0),
        ])
        .unwrap();
        let frames = decode(&encode(&stack)).unwrap().into_real_stack().unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1][[1, 1]], 2.0);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&complex_5x7());
        let text = String::from_utf8_lossy(&bytes[..120]);
        assert!(text.starts_with("PMACE-ARRAY 1\nkind=complex64-pair\nshape=5,7\nbyte_order=little-endian\nlayout=row-major\nend\n"));
        assert_eq!(bytes.len() - text.find("end\n").unwrap() - 4, 5 * 7 * 16);
    }

    fn with_header(header: &str, payload: usize) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        b.extend(std::iter::repeat_n(0u8, payload));
        b
    }

    #[test]
    fn rejections() {
        let ok = "PMACE-ARRAY 1\nkind=float64\nshape=2,2\nbyte_order=little-endian\nlayout=row-major\nend\n";
        assert!(decode(&with_header(ok, 32)).is_ok());
        assert_eq!(
            decode(&with_header(ok, 31)),
            Err(ArrayError::Truncated {
                expected: 32,
                found: 31
            })
        );
        assert_eq!(
            decode(&with_header(&ok.replace("2,2", "2,0"), 0)),
            Err(ArrayError::ZeroDimension(vec![2, 0]))
        );
        assert!(matches!(
            decode(&with_header(&ok.replace("little-endian", "big-endian"), 32)),
            Err(ArrayError::Unsupported(_))
        ));
        assert!(matches!(
            decode(&with_header(
                &ok.replace("2,2", "18446744073709551615,2"),
                0
            )),
            Err(ArrayError::ShapeOverflow(_))
        ));
        assert!(matches!(
            decode(&with_header(&ok.replace("kind=float64\n", ""), 32)),
            Err(ArrayError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode(&with_header(&ok.replace("float64", "int8"), 32)),
            Err(ArrayError::Unsupported(_))
        ));
        assert!(matches!(
            decode(b"garbage"),
            Err(ArrayError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode(&with_header(&ok.replace("shape=2,2", "shape=2,x"), 32)),
            Err(ArrayError::MalformedHeader(_))
        ));
    }

    #[test]
    fn kind_conversions() {
        assert!(complex_5x7().into_real_image().is_err());
        assert!(ArrayData::from_real_image(&Array2::zeros((2, 2)))
            .into_complex_image()
            .is_err());
        assert!(complex_5x7().into_complex_image().is_ok());
    }
}
