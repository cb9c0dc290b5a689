//! Minimal `.npy` (format version 1.0) reader/writer for f32/f64 arrays.
//!
//! Only what the pipeline needs: C-order little-endian `<f4`/`<f8` arrays of
//! arbitrary rank. Files written here load in numpy unchanged, and we read
//! the same subset back. Anything else (fortran order, other dtypes, v2
//! headers) is rejected with [`Error::FormatError`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Array payload dtype, mapped to the numpy descr string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// `<f4`, IEEE-754 single precision, little endian.
    F32,
    /// `<f8`, IEEE-754 double precision, little endian.
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n',
    // padded so the total preamble length is a multiple of 64.
    let prefix = MAGIC.len() + 2 + 2;
    let unpadded = prefix + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;

    let mut out = Vec::with_capacity(prefix + header_len);
    out.extend_from_slice(MAGIC);
    out.push(1); // major version
    out.push(0); // minor version
    out.extend_from_slice(&u16::try_from(header_len).expect("header fits u16").to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat(b' ').take(padding));
    out.push(b'\n');
    out
}

/// Write an f32 array as `.npy` (`<f4`, C order).
pub fn write_f32(path: &Path, array: &ArrayD<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header_bytes(Dtype::F32, array.shape()))?;
    // Standard layout guarantees C-order iteration == memory order.
    let owned;
    let slice = match array.as_slice() {
        Some(s) => s,
        None => {
            owned = array.as_standard_layout().into_owned();
            owned.as_slice().expect("standard layout is contiguous")
        }
    };
    for &v in slice {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Write an f64 array as `.npy` (`<f8`, C order).
pub fn write_f64(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header_bytes(Dtype::F64, array.shape()))?;
    let owned;
    let slice = match array.as_slice() {
        Some(s) => s,
        None => {
            owned = array.as_standard_layout().into_owned();
            owned.as_slice().expect("standard layout is contiguous")
        }
    };
    for &v in slice {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn bad(path: &Path, what: &str) -> Error {
    Error::FormatError(format!("{}: {}", path.display(), what))
}

fn parse_header(path: &Path, r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "truncated file (no magic)"))?;
    if &magic != MAGIC {
        return Err(bad(path, "not an .npy file (bad magic)"));
    }
    let mut version = [0u8; 2];
    r.read_exact(&mut version)
        .map_err(|_| bad(path, "truncated file (no version)"))?;
    if version != [1, 0] {
        return Err(bad(
            path,
            &format!("unsupported .npy version {}.{}", version[0], version[1]),
        ));
    }
    let mut len_bytes = [0u8; 2];
    r.read_exact(&mut len_bytes)
        .map_err(|_| bad(path, "truncated file (no header length)"))?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| bad(path, "truncated header"))?;
    let header = std::str::from_utf8(&header).map_err(|_| bad(path, "non-UTF-8 header"))?;

    let descr = extract_str_field(header, "descr").ok_or_else(|| bad(path, "missing descr"))?;
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(bad(path, &format!("unsupported dtype {other:?}"))),
    };

    let fortran = extract_raw_field(header, "fortran_order")
        .ok_or_else(|| bad(path, "missing fortran_order"))?;
    if fortran.trim_start().starts_with("True") {
        return Err(bad(path, "fortran-order arrays are not supported"));
    }

    let shape_raw =
        extract_raw_field(header, "shape").ok_or_else(|| bad(path, "missing shape"))?;
    let shape = parse_shape(shape_raw).ok_or_else(|| bad(path, "malformed shape tuple"))?;

    Ok(Header { dtype, shape })
}

/// Pull the quoted string value of `'key': '...'` out of the header dict.
fn extract_str_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let raw = extract_raw_field(header, key)?.trim_start();
    let quote = raw.chars().next()?;
    if quote != '\'' && quote != '"' {
        return None;
    }
    let rest = &raw[1..];
    let end = rest.find(quote)?;
    Some(&rest[..end])
}

/// Slice from just after `'key':` to the end of the header.
fn extract_raw_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    for quote in ['\'', '"'] {
        let pat = format!("{quote}{key}{quote}");
        if let Some(pos) = header.find(&pat) {
            let after = &header[pos + pat.len()..];
            let colon = after.find(':')?;
            return Some(after[colon + 1..].trim_start());
        }
    }
    None
}

fn parse_shape(raw: &str) -> Option<Vec<usize>> {
    let raw = raw.trim_start();
    if !raw.starts_with('(') {
        return None;
    }
    let inner = &raw[1..raw.find(')')?];
    let mut shape = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue; // trailing comma in 1-tuples / empty tuple
        }
        shape.push(part.parse::<usize>().ok()?);
    }
    Some(shape)
}

fn checked_len(path: &Path, shape: &[usize], item: usize) -> Result<usize> {
    let mut n: usize = 1;
    for &d in shape {
        n = n
            .checked_mul(d)
            .ok_or_else(|| bad(path, "shape overflows"))?;
    }
    n.checked_mul(item)
        .ok_or_else(|| bad(path, "payload size overflows"))
}

/// Read an `.npy` file as f64, widening `<f4` payloads.
pub fn read_f64(path: &Path) -> Result<ArrayD<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_header(path, &mut r)?;
    let total = checked_len(path, &header.shape, header.dtype.size())?;
    let mut payload = vec![0u8; total];
    r.read_exact(&mut payload)
        .map_err(|_| bad(path, "truncated payload"))?;
    let data: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    ArrayD::from_shape_vec(IxDyn(&header.shape), data)
        .map_err(|e| bad(path, &format!("shape/payload mismatch: {e}")))
}

/// Read an `.npy` file as f32. `<f8` payloads are narrowed.
pub fn read_f32(path: &Path) -> Result<ArrayD<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_header(path, &mut r)?;
    let total = checked_len(path, &header.shape, header.dtype.size())?;
    let mut payload = vec![0u8; total];
    r.read_exact(&mut payload)
        .map_err(|_| bad(path, "truncated payload"))?;
    let data: Vec<f32> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
    };
    ArrayD::from_shape_vec(IxDyn(&header.shape), data)
        .map_err(|e| bad(path, &format!("shape/payload mismatch: {e}")))
}

/// Dtype and shape of an `.npy` file without reading the payload.
pub fn peek(path: &Path) -> Result<(Dtype, Vec<usize>)> {
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_header(path, &mut r)?;
    Ok((header.dtype, header.shape))
}
