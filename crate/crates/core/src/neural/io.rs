//! "NNP1" model files: magic, `u32` version, `u32` descriptor length, the
//! network descriptor as UTF-8 JSON, `u64` value count, then every parameter
//! as f32 little-endian in layer order (conv: kernel, bias; batch norm: gain,
//! shift, running mean, running variance, statistics flag).

use std::fs;
use std::path::Path;

use super::layers::{BatchNormParams, ConvWeights};
use super::network::{LayerKind, LayerParams, NetworkSpec, ParameterSet};
use crate::data::write_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NNP1";
const VERSION: u32 = 1;

fn flatten(params: &ParameterSet) -> Vec<f64> {
    let mut out = Vec::new();
    for p in params.layers() {
        match p {
            LayerParams::Conv(w) => {
                out.extend_from_slice(&w.kernel);
                out.extend_from_slice(&w.bias);
            }
            LayerParams::BatchNorm(b) => {
                out.extend_from_slice(&b.gain);
                out.extend_from_slice(&b.shift);
                out.extend_from_slice(&b.running_mean);
                out.extend_from_slice(&b.running_var);
                out.push(if b.initialized { 1.0 } else { 0.0 });
            }
            LayerParams::None => {}
        }
    }
    out
}

/// Values are stored as f32; parameters produced by [`ParameterSet::init`]
/// and training are already f32-representable, so the round trip is exact.
pub fn encode_model(spec: &NetworkSpec, params: &ParameterSet) -> Result<Vec<u8>> {
    params.check(spec)?;
    let descriptor = serde_json::to_string(spec).map_err(|e| Error::Format(e.to_string()))?;
    let values = flatten(params);
    let mut buf = Vec::with_capacity(20 + descriptor.len() + 4 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    buf.extend_from_slice(descriptor.as_bytes());
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

pub fn decode_model(bytes: &[u8]) -> Result<(NetworkSpec, ParameterSet)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not an NNP1 model (bad magic)".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported NNP1 version {version}")));
    }
    let dlen = read_u32(bytes, 8)? as usize;
    let dend = 12 + dlen;
    let descriptor = bytes.get(12..dend).ok_or(Error::Truncated {
        expected: dend,
        found: bytes.len(),
    })?;
    let descriptor = std::str::from_utf8(descriptor).map_err(|e| Error::Format(format!("descriptor: {e}")))?;
    let spec: NetworkSpec =
        serde_json::from_str(descriptor).map_err(|e| Error::Format(format!("descriptor: {e}")))?;
    spec.validate()?;
    let count_bytes = bytes.get(dend..dend + 8).ok_or(Error::Truncated {
        expected: dend + 8,
        found: bytes.len(),
    })?;
    let count = u64::from_le_bytes(count_bytes.try_into().expect("8 bytes")) as usize;
    let start = dend + 8;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| Error::Format("value count overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut values = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).collect();
        if v.len() != n {
            return Err(Error::Format("value count does not match the descriptor".into()));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        layers.push(match l.kind {
            LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                let k = if l.kind == LayerKind::Conv3x3 { 3 } else { 1 };
                let mut w = ConvWeights::zeros(l.in_channels, l.out_channels, k);
                w.kernel = take(w.kernel.len())?;
                w.bias = take(l.out_channels)?;
                LayerParams::Conv(w)
            }
            LayerKind::BatchNorm => {
                let c = l.out_channels;
                let mut b = BatchNormParams::new(c);
                b.gain = take(c)?;
                b.shift = take(c)?;
                b.running_mean = take(c)?;
                b.running_var = take(c)?;
                b.initialized = take(1)?[0] != 0.0;
                LayerParams::BatchNorm(b)
            }
            _ => LayerParams::None,
        });
    }
    let consumed: usize = spec.parameter_count()
        + spec
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::BatchNorm)
            .map(|l| 2 * l.out_channels + 1)
            .sum::<usize>();
    if consumed != count {
        return Err(Error::Format(format!(
            "descriptor needs {consumed} values, file declares {count}"
        )));
    }
    let params = ParameterSet::from_layers(&spec, layers)?;
    if !params.all_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    Ok((spec, params))
}

pub fn save_model(spec: &NetworkSpec, params: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(spec, params)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(NetworkSpec, ParameterSet)> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::layers::Mode;
    use crate::neural::network::{build_network, build_paper_network, forward, forward_cached, Preset};
    use crate::neural::Tensor4;
    use crate::seeding;
    use rand::Rng;

    fn trained_toy() -> (NetworkSpec, ParameterSet, Tensor4) {
        let spec = build_paper_network(8, Preset::Toy).unwrap();
        let mut params = ParameterSet::init(&spec, 11);
        let mut rng = seeding::stream(3, 0);
        let x = Tensor4::from_fn([2, 1, 6, 9], |_| rng.gen_range(-1.0..1.0));
        forward_cached(&spec, &mut params, &x, Mode::Train).unwrap();
        params.quantize_f32();
        (spec, params, x)
    }

    #[test]
    fn round_trip_gives_identical_outputs() {
        let (spec, params, x) = trained_toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nnp");
        save_model(&spec, &params, &path).unwrap();
        let (spec2, params2) = load_model(&path).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(params2.layers(), params.layers());
        let a = forward(&spec, &params, &x).unwrap();
        let b = forward(&spec2, &params2, &x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn bypass_placement_is_recorded() {
        let spec = build_network(8, Preset::Toy, vec![(1, 8), (4, 5)], 2).unwrap();
        let params = ParameterSet::init(&spec, 1);
        let (spec2, _) = decode_model(&encode_model(&spec, &params).unwrap()).unwrap();
        assert_eq!(spec2.bypasses, vec![(1, 8), (4, 5)]);
        assert_eq!(spec2.input_channels, 2);
    }

    #[test]
    fn corrupt_files_rejected() {
        let (spec, params, _) = trained_toy();
        let bytes = encode_model(&spec, &params).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 4]),
            Err(Error::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_model(&longer), Err(Error::Format(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_model(&version), Err(Error::Format(_))));
    }
}
