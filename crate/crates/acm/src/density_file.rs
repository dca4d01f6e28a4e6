//! Raw density maps: 16-byte header (`ACMDEN64`, height u32, width u32, all
//! little-endian) followed by `height × width` f64 values in row-major order.

use std::path::Path;

use acm_core::{DensityMap, Tensor};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 8] = b"ACMDEN64";
pub const HEADER_LEN: usize = 16;
pub const EXTENSION: &str = "den";

pub fn encode(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * map.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DensityMap> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a density file (bad magic)"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != h * w * 8 {
        return Err(Error::format(
            path,
            format!("header says {h}x{w} but body holds {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DensityMap::from_tensor(Tensor::new(&[h, w], data)?)?)
}

pub fn write(path: &Path, map: &DensityMap) -> Result<()> {
    error::write(path, &encode(map))
}

pub fn read(path: &Path) -> Result<DensityMap> {
    decode(&error::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let map = DensityMap::from_tensor(Tensor::from_fn(&[3, 5], |i| (i as f64).sin() * 1e-3)).unwrap();
        let bytes = encode(&map);
        assert_eq!(bytes.len(), 16 + 15 * 8);
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        let back = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("x");
        assert!(decode(b"short", p).is_err());
        let mut bytes = encode(&DensityMap::zeros(2, 2));
        bytes.pop();
        assert!(decode(&bytes, p).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, p).is_err());
    }
}
