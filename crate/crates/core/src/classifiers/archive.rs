//! Shared single-file weights archive for classifier checkpoints.
//!
//! Same container as the neutralizer checkpoints — 8-byte magic, u64 LE
//! header length, JSON header with a typed metadata block and an array
//! directory, then all tensors as little-endian f32 — parameterized over
//! the metadata type so the judge and the disease model reuse one
//! reader/writer.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::nn::Param;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in floats.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    format_version: u32,
    meta: M,
    arrays: Vec<ArrayEntry>,
}

pub(crate) fn save_archive<M: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    meta: &M,
    named: Vec<(String, &mut Param)>,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, param) in named {
        let len = param.value.len();
        arrays.push(ArrayEntry {
            name,
            shape: param.value.shape().to_vec(),
            offset,
            len,
        });
        for &v in param.value.iter() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += len;
    }
    let header = Header {
        format_version: 1,
        meta,
        arrays,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::FormatError(format!("archive header: {e}")))?;
    let mut file = fs::File::create(path)?;
    file.write_all(magic)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&payload)?;
    Ok(())
}

/// Parsed archive: typed metadata plus tensors still waiting to be claimed.
pub(crate) struct LoadedArchive<M> {
    pub meta: M,
    tensors: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

impl<M> LoadedArchive<M> {
    /// Moves every stored tensor into the matching parameter. Missing,
    /// extra, or misshapen tensors are format errors.
    pub fn assign_all(mut self, named: Vec<(String, &mut Param)>) -> Result<()> {
        for (name, param) in named {
            let (shape, values) = self
                .tensors
                .remove(&name)
                .ok_or_else(|| Error::FormatError(format!("archive is missing tensor {name}")))?;
            if shape != param.value.shape() {
                return Err(Error::FormatError(format!(
                    "tensor {name}: stored shape {:?} vs model shape {:?}",
                    shape,
                    param.value.shape()
                )));
            }
            for (slot, v) in param.value.iter_mut().zip(values) {
                *slot = v as f64;
            }
        }
        if let Some(extra) = self.tensors.keys().next() {
            return Err(Error::FormatError(format!(
                "archive contains unknown tensor {extra}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn load_archive<M: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
) -> Result<LoadedArchive<M>> {
    let mut file = fs::File::open(path)?;
    let mut got_magic = [0u8; 8];
    file.read_exact(&mut got_magic)
        .map_err(|_| Error::FormatError("archive shorter than its magic".into()))?;
    if &got_magic != magic {
        return Err(Error::FormatError(format!("bad archive magic {got_magic:?}")));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::FormatError("archive missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| Error::FormatError("archive header truncated".into()))?;
    let header: Header<M> = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::FormatError(format!("archive header: {e}")))?;
    if header.format_version != 1 {
        return Err(Error::FormatError(format!(
            "unsupported archive format version {}",
            header.format_version
        )));
    }
    let total: usize = header.arrays.iter().map(|a| a.len).sum();
    let mut payload = vec![0u8; total * 4];
    file.read_exact(&mut payload)
        .map_err(|_| Error::FormatError("archive payload truncated".into()))?;
    let mut tensors = HashMap::new();
    for entry in header.arrays {
        let mut values = Vec::with_capacity(entry.len);
        for i in 0..entry.len {
            let at = (entry.offset + i) * 4;
            let bits: [u8; 4] = payload[at..at + 4].try_into().unwrap();
            values.push(f32::from_le_bytes(bits));
        }
        tensors.insert(entry.name, (entry.shape, values));
    }
    Ok(LoadedArchive {
        meta: header.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    const MAGIC: &[u8; 8] = b"TESTARC1";

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Meta {
        label: String,
        seed: u64,
    }

    fn params() -> Vec<Param> {
        vec![
            Param::new(ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3]), |ix| {
                (ix[0] * 3 + ix[1]) as f64 * 0.25
            })),
            Param::new(ArrayD::from_shape_fn(ndarray::IxDyn(&[4]), |ix| {
                -(ix[0] as f64)
            })),
        ]
    }

    #[test]
    fn round_trip_preserves_meta_and_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut src = params();
        let meta = Meta {
            label: "probe".into(),
            seed: 9,
        };
        let named: Vec<(String, &mut Param)> = src
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("t{i}"), p))
            .collect();
        save_archive(&path, MAGIC, &meta, named).unwrap();

        let loaded: LoadedArchive<Meta> = load_archive(&path, MAGIC).unwrap();
        assert_eq!(loaded.meta, meta);
        let mut dst = vec![
            Param::zeros(&[2, 3]),
            Param::zeros(&[4]),
        ];
        let named: Vec<(String, &mut Param)> = dst
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("t{i}"), p))
            .collect();
        loaded.assign_all(named).unwrap();
        assert_eq!(dst[0].value, params()[0].value);
        assert_eq!(dst[1].value, params()[1].value);
    }

    #[test]
    fn mismatches_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut src = params();
        let named: Vec<(String, &mut Param)> = src
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("t{i}"), p))
            .collect();
        save_archive(&path, MAGIC, &Meta { label: "x".into(), seed: 0 }, named).unwrap();

        // Wrong magic constant.
        assert!(matches!(
            load_archive::<Meta>(&path, b"OTHERMAG"),
            Err(Error::FormatError(_))
        ));

        // Model asks for a tensor the file lacks.
        let loaded: LoadedArchive<Meta> = load_archive(&path, MAGIC).unwrap();
        let mut lone = Param::zeros(&[2, 3]);
        assert!(matches!(
            loaded.assign_all(vec![("absent".into(), &mut lone)]),
            Err(Error::FormatError(_))
        ));

        // Model claims fewer tensors than the file holds.
        let loaded: LoadedArchive<Meta> = load_archive(&path, MAGIC).unwrap();
        let mut only = Param::zeros(&[2, 3]);
        assert!(matches!(
            loaded.assign_all(vec![("t0".into(), &mut only)]),
            Err(Error::FormatError(_))
        ));

        // Shape disagreement.
        let loaded: LoadedArchive<Meta> = load_archive(&path, MAGIC).unwrap();
        let mut a = Param::zeros(&[3, 2]);
        let mut b = Param::zeros(&[4]);
        assert!(matches!(
            loaded.assign_all(vec![("t0".into(), &mut a), ("t1".into(), &mut b)]),
            Err(Error::FormatError(_))
        ));

        // Truncated payload.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_archive::<Meta>(&path, MAGIC),
            Err(Error::FormatError(_))
        ));
    }
}
