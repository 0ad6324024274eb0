//! RF data model: the Depth×Rx×SC cube, its Rx-SC depth slices, and the
//! dynamic-aperture receiver sampling mask, plus the `RFC1` / `MSK1` binary
//! formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::seeding;

pub const DEFAULT_SOUND_SPEED: f64 = 1540.0;

const CUBE_MAGIC: &[u8; 4] = b"RFC1";
const CUBE_VERSION: u32 = 1;
const CUBE_HEADER_LEN: usize = 4 + 4 * 4 + 3 * 8;
const MASK_MAGIC: &[u8; 4] = b"MSK1";
const MASK_HEADER_LEN: usize = 4 + 3 * 4 + 8;

/// One frame of raw echo samples indexed `[depth][rx][sc]`.
///
/// Samples are held as `f64` in memory. The on-disk format stores `f32`, so a
/// save/load round trip is lossless exactly when the samples are
/// `f32`-representable (which is the case for every cube read from disk).
#[derive(Debug, Clone, PartialEq)]
pub struct RfCube {
    samples: Array3<f64>,
    pub sampling_freq_hz: f64,
    pub center_freq_hz: f64,
    pub sound_speed_m_s: f64,
}

impl RfCube {
    pub fn new(
        samples: Array3<f64>,
        sampling_freq_hz: f64,
        center_freq_hz: f64,
        sound_speed_m_s: f64,
    ) -> Result<Self> {
        let (d, r, s) = samples.dim();
        if d == 0 || r == 0 || s == 0 {
            return Err(Error::Parameter(format!(
                "cube dimensions must be positive, got {d}x{r}x{s}"
            )));
        }
        for (name, v) in [
            ("sampling_freq_hz", sampling_freq_hz),
            ("center_freq_hz", center_freq_hz),
            ("sound_speed_m_s", sound_speed_m_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RF cube sample".into()));
        }
        Ok(Self {
            samples,
            sampling_freq_hz,
            center_freq_hz,
            sound_speed_m_s,
        })
    }

    pub fn zeros(
        depth_samples: usize,
        num_rx: usize,
        num_sc: usize,
        sampling_freq_hz: f64,
        center_freq_hz: f64,
    ) -> Result<Self> {
        Self::new(
            Array3::zeros((depth_samples, num_rx, num_sc)),
            sampling_freq_hz,
            center_freq_hz,
            DEFAULT_SOUND_SPEED,
        )
    }

    pub fn depth_samples(&self) -> usize {
        self.samples.dim().0
    }

    pub fn num_rx(&self) -> usize {
        self.samples.dim().1
    }

    pub fn num_sc(&self) -> usize {
        self.samples.dim().2
    }

    pub fn samples(&self) -> &Array3<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array3<f64> {
        self.samples
    }

    /// Copy of this cube with the same header and different samples.
    pub fn with_samples(&self, samples: Array3<f64>) -> Result<Self> {
        if samples.dim() != self.samples.dim() {
            return Err(Error::shape(
                format!("{:?}", self.samples.dim()),
                format!("{:?}", samples.dim()),
            ));
        }
        Self::new(
            samples,
            self.sampling_freq_hz,
            self.center_freq_hz,
            self.sound_speed_m_s,
        )
    }

    pub fn planes(&self) -> impl Iterator<Item = RxScPlane> + '_ {
        self.samples
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(k, v)| RxScPlane {
                depth_index: k,
                values: v.to_owned(),
            })
    }
}

/// A single depth slice of the cube; rows are receivers, columns scan lines.
#[derive(Debug, Clone, PartialEq)]
pub struct RxScPlane {
    pub depth_index: usize,
    pub values: Array2<f64>,
}

impl RxScPlane {
    pub fn new(values: Array2<f64>, depth_index: usize) -> Self {
        Self {
            depth_index,
            values,
        }
    }

    pub fn num_rx(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_sc(&self) -> usize {
        self.values.ncols()
    }
}

pub fn extract_plane(cube: &RfCube, depth_index: usize) -> Result<RxScPlane> {
    if depth_index >= cube.depth_samples() {
        return Err(Error::Index {
            what: "depth",
            index: depth_index,
            len: cube.depth_samples(),
        });
    }
    Ok(RxScPlane {
        depth_index,
        values: cube.samples.index_axis(Axis(0), depth_index).to_owned(),
    })
}

pub fn insert_plane(cube: &RfCube, plane: &RxScPlane, depth_index: usize) -> Result<RfCube> {
    let mut out = cube.clone();
    insert_plane_in_place(&mut out, plane, depth_index)?;
    Ok(out)
}

pub(crate) fn insert_plane_in_place(
    cube: &mut RfCube,
    plane: &RxScPlane,
    depth_index: usize,
) -> Result<()> {
    if depth_index >= cube.depth_samples() {
        return Err(Error::Index {
            what: "depth",
            index: depth_index,
            len: cube.depth_samples(),
        });
    }
    let want = (cube.num_rx(), cube.num_sc());
    if plane.values.dim() != want {
        return Err(Error::shape(
            format!("{}x{} plane", want.0, want.1),
            format!("{}x{} plane", plane.num_rx(), plane.num_sc()),
        ));
    }
    if plane.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("plane for depth {depth_index}")));
    }
    cube.samples
        .index_axis_mut(Axis(0), depth_index)
        .assign(&plane.values);
    Ok(())
}

/// Per-scan-line subset of active receivers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    pub ratio: usize,
    pub seed: u64,
    active: Array2<bool>,
}

impl SamplingMask {
    pub fn num_rx(&self) -> usize {
        self.active.nrows()
    }

    pub fn num_sc(&self) -> usize {
        self.active.ncols()
    }

    pub fn active(&self) -> &Array2<bool> {
        &self.active
    }

    pub fn is_active(&self, rx: usize, sc: usize) -> bool {
        self.active[[rx, sc]]
    }

    /// Active receivers per scan line, `ceil(num_rx / ratio)`.
    pub fn per_column(&self) -> usize {
        self.num_rx().div_ceil(self.ratio)
    }

    pub fn density(&self) -> f64 {
        self.per_column() as f64 / self.num_rx() as f64
    }

    pub fn count_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Builds a mask from an explicit pattern. Used by tests and by callers that
    /// need to describe hand-made apertures; `ratio` and `seed` are bookkeeping
    /// only and the per-column count invariant is not enforced.
    pub fn from_pattern(active: Array2<bool>, ratio: usize, seed: u64) -> Self {
        Self {
            ratio,
            seed,
            active,
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let k = self.per_column();
        for (s, col) in self.active.axis_iter(Axis(1)).enumerate() {
            let n = col.iter().filter(|&&a| a).count();
            if n != k {
                return Err(Error::Format(format!(
                    "mask column {s} has {n} active receivers, expected {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws `ceil(num_rx / ratio)` receivers without replacement for every scan
/// line, each column from its own stream keyed by `(seed, column)`.
pub fn make_mask(num_rx: usize, num_sc: usize, ratio: usize, seed: u64) -> Result<SamplingMask> {
    if num_rx == 0 || num_sc == 0 {
        return Err(Error::Parameter(format!(
            "mask dimensions must be positive, got {num_rx}x{num_sc}"
        )));
    }
    if ratio < 1 || ratio > num_rx {
        return Err(Error::Parameter(format!(
            "ratio must be in 1..={num_rx}, got {ratio}"
        )));
    }
    let k = num_rx.div_ceil(ratio);
    let mut active = Array2::from_elem((num_rx, num_sc), false);
    for s in 0..num_sc {
        let mut rng = seeding::stream(seed, s as u64);
        for r in sample(&mut rng, num_rx, k) {
            active[[r, s]] = true;
        }
    }
    Ok(SamplingMask {
        ratio,
        seed,
        active,
    })
}

/// Zero-fills the receivers the mask marks inactive.
pub fn apply_mask(plane: &RxScPlane, mask: &SamplingMask) -> Result<RxScPlane> {
    check_mask_dims(plane.values.dim(), mask)?;
    let mut values = plane.values.clone();
    ndarray::Zip::from(&mut values)
        .and(&mask.active)
        .for_each(|v, &a| {
            if !a {
                *v = 0.0;
            }
        });
    Ok(RxScPlane {
        depth_index: plane.depth_index,
        values,
    })
}

/// Applies the mask to every depth slice.
pub fn apply_mask_cube(cube: &RfCube, mask: &SamplingMask) -> Result<RfCube> {
    check_mask_dims((cube.num_rx(), cube.num_sc()), mask)?;
    let mut samples = cube.samples.clone();
    for mut plane in samples.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut plane)
            .and(&mask.active)
            .for_each(|v, &a| {
                if !a {
                    *v = 0.0;
                }
            });
    }
    cube.with_samples(samples)
}

pub(crate) fn check_mask_dims(dims: (usize, usize), mask: &SamplingMask) -> Result<()> {
    if dims != mask.active.dim() {
        return Err(Error::shape(
            format!("{}x{} (mask)", mask.num_rx(), mask.num_sc()),
            format!("{}x{}", dims.0, dims.1),
        ));
    }
    Ok(())
}

pub fn encode_cube(cube: &RfCube) -> Vec<u8> {
    let n = cube.samples.len();
    let mut buf = Vec::with_capacity(CUBE_HEADER_LEN + 4 * n);
    buf.extend_from_slice(CUBE_MAGIC);
    buf.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    for dim in [cube.depth_samples(), cube.num_rx(), cube.num_sc()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in [
        cube.sampling_freq_hz,
        cube.center_freq_hz,
        cube.sound_speed_m_s,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    // Standard layout iteration is row-major [depth][rx][sc].
    for &v in cube.samples.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_cube(bytes: &[u8]) -> Result<RfCube> {
    if bytes.len() < 4 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::Format("missing RFC1 magic".into()));
    }
    if bytes.len() < CUBE_HEADER_LEN {
        return Err(Error::Truncated {
            expected: CUBE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut rd = Reader::new(&bytes[4..]);
    let version = rd.u32();
    if version != CUBE_VERSION {
        return Err(Error::Format(format!(
            "unsupported RFC1 version {version}"
        )));
    }
    let dims = (rd.u32() as usize, rd.u32() as usize, rd.u32() as usize);
    let fs = rd.f64();
    let fc = rd.f64();
    let c = rd.f64();
    let count = dims
        .0
        .checked_mul(dims.1)
        .and_then(|v| v.checked_mul(dims.2))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let expected = CUBE_HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after RFC1 payload",
            bytes.len() - expected
        )));
    }
    let samples: Vec<f64> = bytes[CUBE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let samples = Array3::from_shape_vec(dims, samples)
        .map_err(|e| Error::Format(e.to_string()))?;
    RfCube::new(samples, fs, fc, c)
}

pub fn save_cube(cube: &RfCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_cube(cube))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<RfCube> {
    decode_cube(&fs::read(path)?)
}

pub fn encode_mask(mask: &SamplingMask) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MASK_HEADER_LEN + mask.active.len());
    buf.extend_from_slice(MASK_MAGIC);
    buf.extend_from_slice(&(mask.num_rx() as u32).to_le_bytes());
    buf.extend_from_slice(&(mask.num_sc() as u32).to_le_bytes());
    buf.extend_from_slice(&(mask.ratio as u32).to_le_bytes());
    buf.extend_from_slice(&mask.seed.to_le_bytes());
    buf.extend(mask.active.iter().map(|&a| a as u8));
    buf
}

pub fn decode_mask(bytes: &[u8]) -> Result<SamplingMask> {
    if bytes.len() < 4 || &bytes[..4] != MASK_MAGIC {
        return Err(Error::Format("missing MSK1 magic".into()));
    }
    if bytes.len() < MASK_HEADER_LEN {
        return Err(Error::Truncated {
            expected: MASK_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut rd = Reader::new(&bytes[4..]);
    let num_rx = rd.u32() as usize;
    let num_sc = rd.u32() as usize;
    let ratio = rd.u32() as usize;
    let seed = rd.u64();
    let expected = MASK_HEADER_LEN + num_rx * num_sc;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected || num_rx == 0 || num_sc == 0 || ratio == 0 || ratio > num_rx {
        return Err(Error::Format("inconsistent MSK1 header".into()));
    }
    let active = bytes[MASK_HEADER_LEN..]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = SamplingMask {
        ratio,
        seed,
        active: Array2::from_shape_vec((num_rx, num_sc), active)
            .map_err(|e| Error::Format(e.to_string()))?,
    };
    mask.check_invariants()?;
    Ok(mask)
}

pub fn save_mask(mask: &SamplingMask, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mask(mask))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    decode_mask(&fs::read(path)?)
}

/// Writes through a sibling temp file so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Little-endian cursor; callers check lengths before reading.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    pub(crate) fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    pub(crate) fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    pub(crate) fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}
