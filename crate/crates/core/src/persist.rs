//! Base64 payloads for model containers: little-endian f64 arrays inside
//! JSON headers.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub(crate) fn decode_f64s(b64: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::ModelFormat(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ModelFormat(format!(
            "payload length {} not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        let values = vec![0.0, -1.5, f64::MIN_POSITIVE, 1e300, -0.0];
        let back = decode_f64s(&encode_f64s(&values)).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        assert!(decode_f64s("AAAA").is_err());
    }
}
