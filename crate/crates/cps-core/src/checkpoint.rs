//! Parameter checkpoint format: a line-based text header (format version,
//! fingerprint, layout) followed by the flat values as little-endian 32-bit
//! floats. Loading verifies the total size against the layout.

use std::path::Path;

use crate::error::CoreError;
use crate::model::{Layout, LayoutEntry};
use crate::params::ParamVector;
use crate::Result;

const MAGIC: &str = "cps-params v1";

pub fn save_params(params: &ParamVector<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn encode_params(params: &ParamVector<f32>) -> Vec<u8> {
    use std::io::Write;
    let mut out = Vec::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "fingerprint {:016x}", params.fingerprint()).unwrap();
    for entry in &params.layout().entries {
        let dims: Vec<String> = entry.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "layer {} {}", entry.name, dims.join("x")).unwrap();
    }
    writeln!(out, "data").unwrap();
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamVector<f32>> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_params(&bytes)
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector<f32>> {
    let header_end = bytes
        .windows(5)
        .position(|w| w == b"data\n")
        .ok_or_else(|| CoreError::MalformedData("checkpoint missing data marker".into()))?
        + 5;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| CoreError::MalformedData("checkpoint header is not utf-8".into()))?;
    let mut lines = header.lines();
    match lines.next() {
        Some(MAGIC) => {}
        other => {
            return Err(CoreError::MalformedData(format!(
                "unsupported checkpoint marker {other:?}"
            )))
        }
    }
    let mut fingerprint = None;
    let mut entries = Vec::new();
    for line in lines {
        if line == "data" {
            break;
        } else if let Some(rest) = line.strip_prefix("fingerprint ") {
            fingerprint = Some(
                u64::from_str_radix(rest, 16)
                    .map_err(|_| CoreError::MalformedData(format!("bad fingerprint {rest}")))?,
            );
        } else if let Some(rest) = line.strip_prefix("layer ") {
            let (name, dims) = rest
                .split_once(' ')
                .ok_or_else(|| CoreError::MalformedData(format!("bad layer line {rest}")))?;
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| {
                    d.parse()
                        .map_err(|_| CoreError::MalformedData(format!("bad layer shape {dims}")))
                })
                .collect::<Result<_>>()?;
            entries.push(LayoutEntry { name: name.to_string(), shape });
        } else {
            return Err(CoreError::MalformedData(format!("unexpected header line {line}")));
        }
    }
    let fingerprint =
        fingerprint.ok_or_else(|| CoreError::MalformedData("checkpoint missing fingerprint".into()))?;
    let layout = Layout { entries };
    let expected = header_end + layout.total_size() * 4;
    if bytes.len() != expected {
        return Err(CoreError::MalformedData(format!(
            "checkpoint size {} does not match layout ({expected} expected)",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(layout.total_size());
    let mut cursor = header_end;
    while cursor < bytes.len() {
        values.push(f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()));
        cursor += 4;
    }
    Ok(ParamVector::from_parts(values, layout, fingerprint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputShape, ModelSpec};

    #[test]
    fn round_trip_preserves_bits() {
        let spec = ModelSpec::dense(vec![5], InputShape::Flat { features: 3 }, 4).unwrap();
        let params = spec.init_params::<f32>(42);
        let encoded = encode_params(&params);
        let decoded = decode_params(&encoded).unwrap();
        assert_eq!(decoded, params);
        assert_eq!(decoded.layout(), params.layout());
        // Byte-stable encoding.
        assert_eq!(encode_params(&decoded), encoded);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let spec = ModelSpec::dense(vec![2], InputShape::Flat { features: 2 }, 2).unwrap();
        let params = spec.init_params::<f32>(1);
        let mut encoded = encode_params(&params);
        encoded.truncate(encoded.len() - 3);
        assert!(matches!(decode_params(&encoded), Err(CoreError::MalformedData(_))));
    }

    #[test]
    fn files_round_trip() {
        let spec = ModelSpec::dense(vec![2], InputShape::Flat { features: 2 }, 2).unwrap();
        let params = spec.init_params::<f32>(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.cpv");
        save_params(&params, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), params);
    }
}
