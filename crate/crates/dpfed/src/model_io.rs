//! `model.bin`: the layer count and layer sizes as little-endian `u64`,
//! followed by every parameter as a little-endian `f64`.

use std::path::Path;

use dpfed_core::model::ModelParams;

use crate::error::{Error, Result};

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(8 * (1 + arch.len() + params.len()));
    out.extend_from_slice(&(arch.len() as u64).to_le_bytes());
    for &n in arch {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut words = bytes
        .chunks_exact(8)
        .map(|c| <[u8; 8]>::try_from(c).unwrap());
    let corrupt = |msg: &str| Error::Config(format!("malformed model file: {msg}"));
    if bytes.len() % 8 != 0 {
        return Err(corrupt("length is not a multiple of 8"));
    }
    let layers = words
        .next()
        .map(u64::from_le_bytes)
        .ok_or_else(|| corrupt("empty"))?;
    if layers as usize > words.len() {
        return Err(corrupt("layer count exceeds file size"));
    }
    let arch: Vec<usize> = words
        .by_ref()
        .take(layers as usize)
        .map(|w| u64::from_le_bytes(w) as usize)
        .collect();
    let values: Vec<f64> = words.map(f64::from_le_bytes).collect();
    Ok(ModelParams::from_values(&arch, values)?)
}

pub fn write_model(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(params)).map_err(Error::io(path))
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpfed_core::model::init_params;

    #[test]
    fn round_trip() {
        let p = init_params(&[5, 4, 3], 7).unwrap();
        let bytes = encode_model(&p);
        assert_eq!(bytes.len(), 8 * (1 + 3 + 5 * 4 + 4 + 4 * 3 + 3));
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &5u64.to_le_bytes());
        assert_eq!(decode_model(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_corrupt_files() {
        let p = init_params(&[2, 2], 1).unwrap();
        let bytes = encode_model(&p);
        assert!(decode_model(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_model(&[]).is_err());
        assert!(decode_model(&u64::MAX.to_le_bytes()).is_err());
    }
}
