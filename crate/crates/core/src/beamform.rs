//! Delay-and-sum receive beamforming and B-mode display mapping.

use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, Reader, RfCube};
use crate::error::{Error, Result};
use crate::phantom::{ArrayKind, ScanLayout, TransducerGeometry};

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;
const IMAGE_MAGIC: &[u8; 4] = b"IMG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Apodization {
    #[default]
    None,
    Hann,
}

impl FromStr for Apodization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Apodization::None),
            "hann" => Ok(Apodization::Hann),
            other => Err(Error::Parameter(format!(
                "unknown apodization `{other}` (expected none|hann)"
            ))),
        }
    }
}

impl Apodization {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Apodization::None => vec![1.0; n],
            Apodization::Hann => (0..n)
                .map(|r| {
                    let x = std::f64::consts::PI * (r as f64 + 0.5) / n as f64;
                    x.sin().powi(2)
                })
                .collect(),
        }
    }
}

/// Dynamic receive focusing on every depth sample of every scan line.
///
/// Returns the pre-envelope beamformed signal, `depth_samples x num_sc`.
pub fn das_beamform(cube: &RfCube, geom: &TransducerGeometry, apod: Apodization) -> Result<Array2<f64>> {
    if geom.num_elements < cube.num_rx() {
        return Err(Error::shape(
            format!("geometry with >= {} elements", cube.num_rx()),
            format!("{} elements", geom.num_elements),
        ));
    }
    let layout = ScanLayout::new(geom, cube.num_rx(), cube.num_sc())?;
    let (depth, num_rx, num_sc) = cube.samples().dim();
    let fs = cube.sampling_freq_hz;
    let c = cube.sound_speed_m_s;
    let weights = apod.weights(num_rx);
    let rf = cube.samples();

    let line = |sc: usize| -> Vec<f64> {
        let origin = layout.origins[sc];
        let mut out = vec![0.0; depth];
        for (k, slot) in out.iter_mut().enumerate() {
            let z = k as f64 * c / (2.0 * fs);
            let fx = origin.x + z * origin.nx;
            let fz = origin.z + z * origin.nz;
            let mut acc = 0.0;
            for (r, w) in weights.iter().enumerate() {
                let el = layout.receiver(sc, r);
                let idx = (z + (fx - el.x).hypot(fz - el.z)) / c * fs;
                let i0 = idx.floor();
                if i0 < 0.0 || i0 as usize + 1 >= depth {
                    // exact hit on the last sample still counts
                    if idx == (depth - 1) as f64 {
                        acc += w * rf[[depth - 1, r, sc]];
                    }
                    continue;
                }
                let i = i0 as usize;
                let frac = idx - i0;
                acc += w * ((1.0 - frac) * rf[[i, r, sc]] + frac * rf[[i + 1, r, sc]]);
            }
            *slot = acc;
        }
        out
    };

    #[cfg(feature = "parallel")]
    let lines: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..num_sc).into_par_iter().map(line).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let lines: Vec<Vec<f64>> = (0..num_sc).map(line).collect();

    let mut out = Array2::zeros((depth, num_sc));
    for (sc, col) in lines.into_iter().enumerate() {
        out.column_mut(sc).assign(&ndarray::Array1::from(col));
    }
    Ok(out)
}

/// Magnitude of the analytic signal (FFT Hilbert transform).
pub fn envelope(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    // One-sided spectrum: keep DC (and Nyquist), double positive frequencies.
    let half = n / 2;
    for (i, v) in buf.iter_mut().enumerate() {
        let gain = if i == 0 || (n % 2 == 0 && i == half) {
            1.0
        } else if i <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    ifft.process(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

/// Envelope of every column (depth direction) of a beamformed matrix.
pub fn envelope_columns(rf: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(rf.dim());
    for (sc, col) in rf.axis_iter(Axis(1)).enumerate() {
        let env = envelope(&col.to_vec());
        out.column_mut(sc).assign(&ndarray::Array1::from(env));
    }
    out
}

/// Log-compressed image in dB, clipped to `[-dynamic_range_db, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub values: Array2<f64>,
    pub dynamic_range_db: f64,
    pub kind: ArrayKind,
    /// Axial distance between depth rows, `c / (2 fs)`.
    pub axial_step_m: f64,
}

pub fn log_compress(env: &Array2<f64>, dynamic_range_db: f64) -> Result<Array2<f64>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::Parameter(format!(
            "dynamic range must be > 0 dB, got {dynamic_range_db}"
        )));
    }
    let max = env.iter().fold(0.0f64, |m, &v| m.max(v));
    if max <= 0.0 {
        return Ok(Array2::from_elem(env.dim(), -dynamic_range_db));
    }
    Ok(env.mapv(|v| {
        let db = 20.0 * (v / max).log10();
        if db.is_nan() {
            -dynamic_range_db
        } else {
            db.max(-dynamic_range_db)
        }
    }))
}

/// Full chain: DAS, envelope, log compression.
pub fn bmode(
    cube: &RfCube,
    geom: &TransducerGeometry,
    apod: Apodization,
    dynamic_range_db: f64,
) -> Result<BModeImage> {
    let rf = das_beamform(cube, geom, apod)?;
    let env = envelope_columns(&rf);
    Ok(BModeImage {
        values: log_compress(&env, dynamic_range_db)?,
        dynamic_range_db,
        kind: geom.kind,
        axial_step_m: cube.sound_speed_m_s / (2.0 * cube.sampling_freq_hz),
    })
}

/// Cartesian raster with its pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub values: Array2<f64>,
    pub x0_m: f64,
    pub z0_m: f64,
    pub dx_m: f64,
    pub dz_m: f64,
}

/// Resamples a B-mode image onto a Cartesian grid. Linear images pass through
/// unchanged; convex images are mapped polar-to-Cartesian with bilinear
/// interpolation and out-of-sector pixels set to `-dynamic_range_db`.
pub fn scan_convert(img: &BModeImage, geom: &TransducerGeometry) -> Result<Raster> {
    if img.kind != geom.kind {
        return Err(Error::Parameter(format!(
            "image is {} but geometry is {}",
            img.kind, geom.kind
        )));
    }
    let (rows, cols) = img.values.dim();
    let layout = ScanLayout::new(geom, 1, cols)?;
    match geom.kind {
        ArrayKind::Linear => {
            let dx = if cols > 1 {
                layout.origins[1].x - layout.origins[0].x
            } else {
                geom.pitch_m
            };
            Ok(Raster {
                values: img.values.clone(),
                x0_m: layout.origins[0].x,
                z0_m: 0.0,
                dx_m: dx,
                dz_m: img.axial_step_m,
            })
        }
        ArrayKind::Convex => {
            if !(geom.radius_m > 0.0) {
                return Err(Error::Parameter(
                    "convex scan conversion needs radius_m".into(),
                ));
            }
            let sector = Sector::new(geom, &layout, rows, img.axial_step_m);
            let (x_min, x_max, z_min, z_max) = sector.bounds();
            let dz = (z_max - z_min) / rows as f64;
            let out_cols = ((x_max - x_min) / dz).ceil().max(1.0) as usize;
            let mut values = Array2::from_elem((rows, out_cols), -img.dynamic_range_db);
            for i in 0..rows {
                let z = z_min + (i as f64 + 0.5) * dz;
                for j in 0..out_cols {
                    let x = x_min + (j as f64 + 0.5) * dz;
                    if let Some((k, s)) = sector.to_polar(x, z) {
                        values[[i, j]] = bilinear(&img.values, k, s);
                    }
                }
            }
            Ok(Raster {
                values,
                x0_m: x_min + 0.5 * dz,
                z0_m: z_min + 0.5 * dz,
                dx_m: dz,
                dz_m: dz,
            })
        }
    }
}

/// Polar sample grid of a convex image: row k at radius R + k*dr, column s at
/// angle theta_0 + s*dtheta.
pub(crate) struct Sector {
    radius: f64,
    axial_step: f64,
    theta0: f64,
    dtheta: f64,
    rows: usize,
    cols: usize,
}

impl Sector {
    fn new(geom: &TransducerGeometry, layout: &ScanLayout, rows: usize, axial_step: f64) -> Self {
        let angle = |i: usize| layout.origins[i].nx.atan2(layout.origins[i].nz);
        let cols = layout.num_sc();
        let theta0 = angle(0);
        let dtheta = if cols > 1 {
            (angle(cols - 1) - theta0) / (cols - 1) as f64
        } else {
            0.0
        };
        Self {
            radius: geom.radius_m,
            axial_step,
            theta0,
            dtheta,
            rows,
            cols,
        }
    }

    /// Cartesian position of polar sample (k, s).
    pub(crate) fn to_cartesian(&self, k: f64, s: f64) -> (f64, f64) {
        let rho = self.radius + k * self.axial_step;
        let theta = self.theta0 + s * self.dtheta;
        (rho * theta.sin(), rho * theta.cos() - self.radius)
    }

    fn to_polar(&self, x: f64, z: f64) -> Option<(f64, f64)> {
        let rho = x.hypot(z + self.radius);
        let theta = x.atan2(z + self.radius);
        let k = (rho - self.radius) / self.axial_step;
        let s = if self.dtheta != 0.0 {
            (theta - self.theta0) / self.dtheta
        } else {
            0.0
        };
        let inside = k >= 0.0
            && k <= (self.rows - 1) as f64
            && s >= 0.0
            && s <= (self.cols - 1) as f64;
        inside.then_some((k, s))
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let kmax = (self.rows - 1) as f64;
        let smax = (self.cols - 1) as f64;
        let corners = [
            self.to_cartesian(0.0, 0.0),
            self.to_cartesian(0.0, smax),
            self.to_cartesian(kmax, 0.0),
            self.to_cartesian(kmax, smax),
            self.to_cartesian(kmax, smax / 2.0),
        ];
        let mut b = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, z) in corners {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(z);
            b.3 = b.3.max(z);
        }
        // the arc apex is the shallowest point when the sector spans theta = 0
        if self.theta0 <= 0.0 && self.theta0 + smax * self.dtheta >= 0.0 {
            b.2 = b.2.min(0.0);
        }
        b
    }
}

fn bilinear(values: &Array2<f64>, k: f64, s: f64) -> f64 {
    let (rows, cols) = values.dim();
    let k0 = (k.floor() as usize).min(rows - 1);
    let s0 = (s.floor() as usize).min(cols - 1);
    let k1 = (k0 + 1).min(rows - 1);
    let s1 = (s0 + 1).min(cols - 1);
    let fk = k - k0 as f64;
    let fs = s - s0 as f64;
    let top = (1.0 - fs) * values[[k0, s0]] + fs * values[[k0, s1]];
    let bottom = (1.0 - fs) * values[[k1, s0]] + fs * values[[k1, s1]];
    (1.0 - fk) * top + fk * bottom
}

/// Peak-to-sidelobe ratio (dB) along the depth row through `peak`, excluding
/// `mainlobe` columns either side of it.
pub fn peak_to_sidelobe_db(env: &Array2<f64>, peak: (usize, usize), mainlobe: usize) -> f64 {
    let row = env.row(peak.0);
    let p = row[peak.1];
    let side = row
        .iter()
        .enumerate()
        .filter(|(s, _)| s.abs_diff(peak.1) > mainlobe)
        .fold(0.0f64, |m, (_, &v)| m.max(v));
    20.0 * (p / side).log10()
}

/// Maps `[-dynamic_range, 0]` dB to 8-bit gray.
pub fn to_gray8(values: &Array2<f64>, dynamic_range_db: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            let t = ((v + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect()
}

pub fn save_png(values: &Array2<f64>, dynamic_range_db: f64, path: impl AsRef<Path>) -> Result<()> {
    let (rows, cols) = values.dim();
    let img = image::GrayImage::from_raw(cols as u32, rows as u32, to_gray8(values, dynamic_range_db))
        .ok_or_else(|| Error::shape(format!("{rows}x{cols} pixels"), "short buffer"))?;
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn encode_image(values: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let mut buf = Vec::with_capacity(12 + 4 * values.len());
    buf.extend_from_slice(IMAGE_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in values.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_image(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 4 || &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Format("missing IMG1 magic".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let mut rd = Reader::new(&bytes[4..]);
    let rows = rd.u32() as usize;
    let cols = rd.u32() as usize;
    let expected = 12 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_image(values: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_image(values))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    decode_image(&std::fs::read(path)?)
}

/// Depth window of rows `[lo, hi)`; convenience for reports.
pub fn crop_rows(values: &Array2<f64>, lo: usize, hi: usize) -> Array2<f64> {
    values.slice(s![lo..hi, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_mask_cube, make_mask};
    use crate::phantom::{
        linear_scene, simulate_cube, Acquisition, Phantom, Scatterer, SceneSize,
        LINEAR_CENTER_FREQ,
    };

    fn quiet_acq(num_rx: usize) -> Acquisition {
        Acquisition {
            depth_samples: 1024,
            num_rx,
            num_sc: 48,
            sampling_freq_hz: 40e6,
            noise_sigma: 0.0,
        }
    }

    fn point_cube(num_rx: usize, z: f64, s: usize) -> (RfCube, TransducerGeometry) {
        let geom = TransducerGeometry::linear(64, 0.2e-3, LINEAR_CENTER_FREQ);
        let mut acq = quiet_acq(num_rx);
        acq.num_sc = 64;
        let layout = ScanLayout::new(&geom, num_rx, 64).unwrap();
        let phantom = Phantom::new(vec![Scatterer {
            x_m: layout.origins[s].x,
            z_m: z,
            amplitude: 1.0,
        }]);
        (simulate_cube(&geom, &phantom, &acq, 0).unwrap(), geom)
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
    }

    #[test]
    fn localizes_on_axis_point() {
        for z in [3e-3, 6.5e-3, 10e-3, 14e-3, 18e-3] {
            let (cube, geom) = point_cube(32, z, 30);
            let rf = das_beamform(&cube, &geom, Apodization::None).unwrap();
            let env = envelope(&rf.column(30).to_vec());
            let expected = (2.0 * z / 1540.0 * 40e6).round() as isize;
            assert!((argmax(&env) as isize - expected).abs() <= 1, "z={z}");
        }
    }

    #[test]
    fn zero_cube_zero_image() {
        let cube = RfCube::zeros(64, 8, 16, 40e6, 5e6).unwrap();
        let geom = TransducerGeometry::linear(16, 0.2e-3, 5e6);
        let rf = das_beamform(&cube, &geom, Apodization::Hann).unwrap();
        assert!(rf.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn larger_aperture_has_more_gain() {
        let peak = |n: usize| {
            let (cube, geom) = point_cube(n, 12e-3, 32);
            let rf = das_beamform(&cube, &geom, Apodization::None).unwrap();
            envelope(&rf.column(32).to_vec())
                .into_iter()
                .fold(0.0f64, f64::max)
        };
        assert!(peak(16) < peak(64));
    }

    #[test]
    fn das_is_linear() {
        let scene = linear_scene(2, SceneSize::TOY);
        let a = scene.simulate().unwrap();
        let b = linear_scene(3, SceneSize::TOY).simulate().unwrap();
        let sum = a.with_samples(a.samples() + b.samples()).unwrap();
        let g = &scene.geometry;
        let lhs = das_beamform(&sum, g, Apodization::Hann).unwrap();
        let rhs = das_beamform(&a, g, Apodization::Hann).unwrap()
            + das_beamform(&b, g, Apodization::Hann).unwrap();
        let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff <= 1e-9 * scale, "{diff} vs {scale}");
    }

    #[test]
    fn envelope_of_cosine_is_flat() {
        let n = 1024;
        let fs = 40e6;
        // fc on an FFT bin so the tone is exactly periodic
        let fc = 200.0 * fs / n as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * fc * i as f64 / fs).cos())
            .collect();
        let env = envelope(&x);
        for v in &env[64..n - 64] {
            assert!((v - 1.0).abs() <= 0.02);
        }
        // off-bin tone: ripple stays small away from the edges
        let fc = 5.3e6;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * fc * i as f64 / fs).cos())
            .collect();
        let env = envelope(&x);
        for v in &env[128..n - 128] {
            assert!((v - 1.0).abs() <= 0.02, "{v}");
        }
        for (e, s) in env.iter().zip(&x) {
            assert!(*e >= s.abs() - 1e-9);
        }
        assert!(envelope(&[0.0; 16]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_compress_rules() {
        let env = Array2::from_shape_vec((1, 3), vec![10.0, 1.0, 1e-9]).unwrap();
        let db = log_compress(&env, 60.0).unwrap();
        assert_eq!(db[[0, 0]], 0.0);
        assert!((db[[0, 1]] + 20.0).abs() < 1e-12);
        assert_eq!(db[[0, 2]], -60.0);
        let zero = log_compress(&Array2::zeros((2, 2)), 40.0).unwrap();
        assert!(zero.iter().all(|&v| v == -40.0));
        assert!(log_compress(&env, 0.0).is_err());
    }

    fn convex_geom() -> TransducerGeometry {
        TransducerGeometry::convex(48, 0.35e-3, 20e-3, 3.2e6)
    }

    #[test]
    fn linear_scan_convert_is_identity() {
        let values = Array2::from_shape_fn((20, 8), |(i, j)| -((i * j) as f64 % 60.0));
        let img = BModeImage {
            values: values.clone(),
            dynamic_range_db: 60.0,
            kind: ArrayKind::Linear,
            axial_step_m: 1.925e-5,
        };
        let geom = TransducerGeometry::linear(8, 0.2e-3, 5e6);
        let r = scan_convert(&img, &geom).unwrap();
        assert_eq!(r.values, values);
        assert!((r.dx_m - 0.2e-3).abs() < 1e-15);
    }

    #[test]
    fn convex_scan_convert_constant_sector() {
        let img = BModeImage {
            values: Array2::from_elem((200, 48), -12.5),
            dynamic_range_db: 60.0,
            kind: ArrayKind::Convex,
            axial_step_m: 1e-4,
        };
        let r = scan_convert(&img, &convex_geom()).unwrap();
        let inside = r.values.iter().filter(|&&v| v != -60.0).count();
        assert!(inside > r.values.len() / 4);
        for &v in r.values.iter() {
            assert!(v == -60.0 || (v + 12.5).abs() < 1e-6);
        }
    }

    #[test]
    fn convex_bright_pixel_lands_at_polar_position() {
        let geom = convex_geom();
        let mut values = Array2::from_elem((200, 48), -60.0);
        let (k, s) = (120usize, 13usize);
        values[[k, s]] = 0.0;
        let img = BModeImage {
            values,
            dynamic_range_db: 60.0,
            kind: ArrayKind::Convex,
            axial_step_m: 1e-4,
        };
        let r = scan_convert(&img, &geom).unwrap();
        let layout = ScanLayout::new(&geom, 1, 48).unwrap();
        let sector = Sector::new(&geom, &layout, 200, 1e-4);
        let (x, z) = sector.to_cartesian(k as f64, s as f64);
        // bilinear weights are affine in the dB values, so (v + 60) is the
        // interpolation weight of the bright sample at every pixel
        let (mut wsum, mut cx, mut cz) = (0.0, 0.0, 0.0);
        for ((i, j), &v) in r.values.indexed_iter() {
            let w = v + 60.0;
            wsum += w;
            cx += w * (r.x0_m + j as f64 * r.dx_m);
            cz += w * (r.z0_m + i as f64 * r.dz_m);
        }
        let (px, pz) = (cx / wsum, cz / wsum);
        assert!(
            (px - x).abs() <= r.dx_m && (pz - z).abs() <= r.dz_m,
            "({px}, {pz}) vs ({x}, {z})"
        );
    }

    #[test]
    fn scan_convert_needs_convex_parameters() {
        let img = BModeImage {
            values: Array2::zeros((4, 4)),
            dynamic_range_db: 60.0,
            kind: ArrayKind::Convex,
            axial_step_m: 1e-4,
        };
        let mut g = convex_geom();
        g.radius_m = 0.0;
        assert!(scan_convert(&img, &g).is_err());
        assert!(scan_convert(&img, &TransducerGeometry::linear(4, 1e-4, 5e6)).is_err());
    }

    #[test]
    fn sub_sampling_lowers_peak_to_sidelobe() {
        let (cube, geom) = point_cube(32, 10e-3, 30);
        let mask = make_mask(32, 64, 4, 5).unwrap();
        let sub = apply_mask_cube(&cube, &mask).unwrap();
        let pslr = |c: &RfCube| {
            let env = envelope_columns(&das_beamform(c, &geom, Apodization::None).unwrap());
            let k = (2.0 * 10e-3f64 / 1540.0 * 40e6).round() as usize;
            let k = (k - 3..=k + 3).max_by(|&a, &b| env[[a, 30]].total_cmp(&env[[b, 30]])).unwrap();
            peak_to_sidelobe_db(&env, (k, 30), 2)
        };
        assert!(pslr(&sub) < pslr(&cube));
    }

    #[test]
    fn image_file_round_trip() {
        let v = Array2::from_shape_fn((3, 5), |(i, j)| -(i as f64) * 1.5 - j as f64);
        let bytes = encode_image(&v);
        assert_eq!(decode_image(&bytes).unwrap(), v);
        assert!(decode_image(&bytes[..bytes.len() - 1]).is_err());
    }
}
