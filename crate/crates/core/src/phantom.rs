//! Point-scatterer RF simulation for linear and convex arrays.
//!
//! Transmit is an idealized focused line: the transmit path is the scatterer's
//! projection on the scan-line axis. Receive uses a dynamic aperture of
//! `num_rx` contiguous elements centered on the scan line and clamped at the
//! array ends. Echoes are Gaussian-modulated cosines.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{RfCube, DEFAULT_SOUND_SPEED};
use crate::error::{Error, Result};
use crate::seeding;

pub const DEFAULT_FRACTIONAL_BANDWIDTH: f64 = 0.6;
pub const DEFAULT_SAMPLING_FREQ: f64 = 40e6;
pub const LINEAR_CENTER_FREQ: f64 = 8.48e6;
pub const CONVEX_CENTER_FREQ: f64 = 3.2e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Linear,
    Convex,
}

impl FromStr for ArrayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ArrayKind::Linear),
            "convex" => Ok(ArrayKind::Convex),
            other => Err(Error::Parameter(format!(
                "unknown array kind `{other}` (expected linear|convex)"
            ))),
        }
    }
}

impl std::fmt::Display for ArrayKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArrayKind::Linear => "linear",
            ArrayKind::Convex => "convex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerGeometry {
    pub kind: ArrayKind,
    pub num_elements: usize,
    /// Element spacing along the array (linear) or along the arc (convex).
    pub pitch_m: f64,
    /// Arc radius; ignored for linear arrays.
    pub radius_m: f64,
    pub center_freq_hz: f64,
    /// -6 dB fractional bandwidth of the echo pulse.
    pub fractional_bandwidth: f64,
}

impl TransducerGeometry {
    pub fn linear(num_elements: usize, pitch_m: f64, center_freq_hz: f64) -> Self {
        Self {
            kind: ArrayKind::Linear,
            num_elements,
            pitch_m,
            radius_m: 0.0,
            center_freq_hz,
            fractional_bandwidth: DEFAULT_FRACTIONAL_BANDWIDTH,
        }
    }

    pub fn convex(num_elements: usize, pitch_m: f64, radius_m: f64, center_freq_hz: f64) -> Self {
        Self {
            kind: ArrayKind::Convex,
            num_elements,
            pitch_m,
            radius_m,
            center_freq_hz,
            fractional_bandwidth: DEFAULT_FRACTIONAL_BANDWIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements == 0 {
            return Err(Error::Parameter("num_elements must be positive".into()));
        }
        if !(self.pitch_m > 0.0) {
            return Err(Error::Parameter(format!(
                "pitch_m must be > 0, got {}",
                self.pitch_m
            )));
        }
        if self.kind == ArrayKind::Convex && !(self.radius_m > 0.0) {
            return Err(Error::Parameter(format!(
                "convex array needs radius_m > 0, got {}",
                self.radius_m
            )));
        }
        if !(self.center_freq_hz > 0.0) || !(self.fractional_bandwidth > 0.0) {
            return Err(Error::Parameter(
                "center frequency and bandwidth must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Angular element spacing of a convex array.
    pub fn angular_pitch(&self) -> f64 {
        self.pitch_m / self.radius_m
    }

    /// Position and outward unit normal at fractional element coordinate `u`
    /// (`u = e` lands on element `e`).
    fn point_at(&self, u: f64) -> Element {
        let centered = u - (self.num_elements as f64 - 1.0) / 2.0;
        match self.kind {
            ArrayKind::Linear => Element {
                x: centered * self.pitch_m,
                z: 0.0,
                nx: 0.0,
                nz: 1.0,
            },
            ArrayKind::Convex => {
                // Arc center sits at (0, -R) so the apex touches z = 0.
                let theta = centered * self.angular_pitch();
                let (s, c) = theta.sin_cos();
                Element {
                    x: self.radius_m * s,
                    z: self.radius_m * c - self.radius_m,
                    nx: s,
                    nz: c,
                }
            }
        }
    }

    pub fn arc_center(&self) -> (f64, f64) {
        (0.0, -self.radius_m)
    }
}

/// Element (or scan-line origin) position with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub x: f64,
    pub z: f64,
    pub nx: f64,
    pub nz: f64,
}

pub fn element_positions(geom: &TransducerGeometry) -> Result<Vec<Element>> {
    geom.validate()?;
    Ok((0..geom.num_elements)
        .map(|e| geom.point_at(e as f64))
        .collect())
}

/// Scan-line layout shared by the simulator and the beamformer.
#[derive(Debug, Clone)]
pub struct ScanLayout {
    pub origins: Vec<Element>,
    /// First element of each scan line's receive aperture.
    pub aperture_start: Vec<usize>,
    pub elements: Vec<Element>,
    pub num_rx: usize,
}

impl ScanLayout {
    /// Scan lines are spread uniformly over the array in element coordinates;
    /// with `num_sc == num_elements` each line sits on an element.
    pub fn new(geom: &TransducerGeometry, num_rx: usize, num_sc: usize) -> Result<Self> {
        geom.validate()?;
        if num_rx == 0 || num_sc == 0 {
            return Err(Error::Parameter("num_rx and num_sc must be positive".into()));
        }
        if num_rx > geom.num_elements {
            return Err(Error::Parameter(format!(
                "num_rx {num_rx} exceeds num_elements {}",
                geom.num_elements
            )));
        }
        let n = geom.num_elements;
        let mut origins = Vec::with_capacity(num_sc);
        let mut aperture_start = Vec::with_capacity(num_sc);
        for s in 0..num_sc {
            let u = if num_sc == 1 {
                (n as f64 - 1.0) / 2.0
            } else {
                s as f64 * (n as f64 - 1.0) / (num_sc as f64 - 1.0)
            };
            origins.push(geom.point_at(u));
            let center = u.round() as isize;
            let start = (center - (num_rx / 2) as isize).clamp(0, (n - num_rx) as isize);
            aperture_start.push(start as usize);
        }
        Ok(Self {
            origins,
            aperture_start,
            elements: element_positions(geom)?,
            num_rx,
        })
    }

    pub fn num_sc(&self) -> usize {
        self.origins.len()
    }

    /// Width of one receive aperture, `num_rx` element spacings.
    pub fn aperture_width(&self) -> f64 {
        match self.elements.as_slice() {
            [a, b, ..] => self.num_rx as f64 * (b.x - a.x).hypot(b.z - a.z),
            _ => 1.0,
        }
    }

    pub fn receiver(&self, s: usize, r: usize) -> Element {
        self.elements[self.aperture_start[s] + r]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x_m: f64,
    pub z_m: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    pub sound_speed_m_s: f64,
}

impl Phantom {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Self {
            scatterers,
            sound_speed_m_s: DEFAULT_SOUND_SPEED,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    amplitude: s.amplitude * alpha,
                    ..*s
                })
                .collect(),
            sound_speed_m_s: self.sound_speed_m_s,
        }
    }
}

/// Acquisition parameters that, with a geometry and phantom, fix a cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub depth_samples: usize,
    pub num_rx: usize,
    pub num_sc: usize,
    pub sampling_freq_hz: f64,
    pub noise_sigma: f64,
}

impl Acquisition {
    pub fn max_depth_m(&self, sound_speed: f64) -> f64 {
        self.depth_samples as f64 / self.sampling_freq_hz * sound_speed / 2.0
    }
}

/// Gaussian-modulated cosine echo.
#[derive(Debug, Clone, Copy)]
pub struct Pulse {
    center_freq_hz: f64,
    envelope_rate: f64,
    half_support_s: f64,
}

impl Pulse {
    pub fn new(center_freq_hz: f64, fractional_bandwidth: f64) -> Self {
        // Envelope exp(-a t^2) whose spectrum is down 6 dB at fc*(1 +- bw/2).
        let ref_level = 10f64.powf(-6.0 / 20.0);
        let a = -(std::f64::consts::PI * center_freq_hz * fractional_bandwidth).powi(2)
            / (4.0 * ref_level.ln());
        // exp(-a t^2) < 1e-12 beyond this
        let half_support_s = (12.0 * std::f64::consts::LN_10 / a).sqrt();
        Self {
            center_freq_hz,
            envelope_rate: a,
            half_support_s,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        (-self.envelope_rate * t * t).exp()
            * (2.0 * std::f64::consts::PI * self.center_freq_hz * t).cos()
    }

    pub fn envelope(&self, t: f64) -> f64 {
        (-self.envelope_rate * t * t).exp()
    }

    pub fn half_support_s(&self) -> f64 {
        self.half_support_s
    }
}

/// Simulates one frame. Scan lines are independent; noise for line `s` comes
/// from the stream `(seed, s)`, so the output does not depend on threading.
pub fn simulate_cube(
    geom: &TransducerGeometry,
    phantom: &Phantom,
    acq: &Acquisition,
    seed: u64,
) -> Result<RfCube> {
    let layout = ScanLayout::new(geom, acq.num_rx, acq.num_sc)?;
    let c = phantom.sound_speed_m_s;
    if !(c > 0.0) || !(acq.sampling_freq_hz > 0.0) || acq.depth_samples == 0 {
        return Err(Error::Parameter(
            "sound speed, sampling frequency and depth must be positive".into(),
        ));
    }
    if !(acq.noise_sigma >= 0.0) {
        return Err(Error::Parameter("noise_sigma must be >= 0".into()));
    }
    let max_depth = acq.max_depth_m(c);
    for (i, sc) in phantom.scatterers.iter().enumerate() {
        if !(sc.z_m > 0.0 && sc.z_m <= max_depth) || !sc.x_m.is_finite() || !sc.amplitude.is_finite() {
            return Err(Error::Parameter(format!(
                "scatterer {i} at z={} m outside imaging depth (0, {max_depth}] m",
                sc.z_m
            )));
        }
    }
    let pulse = Pulse::new(geom.center_freq_hz, geom.fractional_bandwidth);

    let line = |s: usize| -> Array2<f64> {
        let mut trace = Array2::<f64>::zeros((acq.depth_samples, acq.num_rx));
        simulate_line(&layout, phantom, acq, &pulse, s, &mut trace);
        if acq.noise_sigma > 0.0 {
            let mut rng = seeding::stream(seed, s as u64);
            let normal = Normal::new(0.0, acq.noise_sigma).expect("sigma checked above");
            trace.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        trace
    };

    #[cfg(feature = "parallel")]
    let lines: Vec<Array2<f64>> = {
        use rayon::prelude::*;
        (0..acq.num_sc).into_par_iter().map(line).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let lines: Vec<Array2<f64>> = (0..acq.num_sc).map(line).collect();

    let mut samples = Array3::<f64>::zeros((acq.depth_samples, acq.num_rx, acq.num_sc));
    for (s, trace) in lines.into_iter().enumerate() {
        samples.index_axis_mut(Axis(2), s).assign(&trace);
    }
    RfCube::new(samples, acq.sampling_freq_hz, geom.center_freq_hz, c)
}

/// Lateral amplitude profile of the idealized focused transmit beam: a
/// Gaussian whose full width at half maximum is the diffraction limit
/// `wavelength * axial / aperture`, floored at one wavelength.
pub fn transmit_gain(lateral_m: f64, axial_m: f64, wavelength_m: f64, aperture_m: f64) -> f64 {
    let fwhm = (wavelength_m * axial_m.max(0.0) / aperture_m).max(wavelength_m);
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    (-0.5 * (lateral_m / sigma).powi(2)).exp()
}

fn simulate_line(
    layout: &ScanLayout,
    phantom: &Phantom,
    acq: &Acquisition,
    pulse: &Pulse,
    s: usize,
    trace: &mut Array2<f64>,
) {
    let c = phantom.sound_speed_m_s;
    let fs = acq.sampling_freq_hz;
    let origin = layout.origins[s];
    let support = pulse.half_support_s() * fs;
    let wavelength = c / pulse.center_freq_hz;
    let aperture = layout.aperture_width();
    for sc in &phantom.scatterers {
        let tx = (sc.x_m - origin.x) * origin.nx + (sc.z_m - origin.z) * origin.nz;
        let lateral = (sc.x_m - origin.x) * origin.nz - (sc.z_m - origin.z) * origin.nx;
        let gain = transmit_gain(lateral, tx, wavelength, aperture);
        if gain < 1e-12 {
            continue;
        }
        for r in 0..acq.num_rx {
            let el = layout.receiver(s, r);
            let rx = (sc.x_m - el.x).hypot(sc.z_m - el.z);
            let delay_samples = (tx + rx) / c * fs;
            let lo = (delay_samples - support).ceil().max(0.0) as usize;
            let hi = ((delay_samples + support).floor() as isize).min(acq.depth_samples as isize - 1);
            if hi < lo as isize {
                continue;
            }
            for k in lo..=hi as usize {
                let t = (k as f64 - delay_samples) / fs;
                trace[[k, r]] += gain * sc.amplitude * pulse.eval(t);
            }
        }
    }
}

/// Size presets for the synthetic scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSize {
    pub depth_samples: usize,
    pub num_rx: usize,
    pub num_sc: usize,
}

impl SceneSize {
    /// 64x384 Rx-SC planes, 2048 depth samples (~39 mm at 40 MHz).
    pub const FULL: SceneSize = SceneSize {
        depth_samples: 2048,
        num_rx: 64,
        num_sc: 384,
    };
    /// 16x48 planes for desk-scale training.
    pub const TOY: SceneSize = SceneSize {
        depth_samples: 1024,
        num_rx: 16,
        num_sc: 48,
    };
}

/// Everything needed to regenerate one synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub geometry: TransducerGeometry,
    pub phantom: Phantom,
    pub acquisition: Acquisition,
    pub seed: u64,
}

impl Scene {
    pub fn simulate(&self) -> Result<RfCube> {
        simulate_cube(&self.geometry, &self.phantom, &self.acquisition, self.seed)
    }
}

pub const DEFAULT_NOISE_SIGMA: f64 = 0.002;

pub fn default_linear_scene(seed: u64) -> (TransducerGeometry, Phantom) {
    let scene = linear_scene(seed, SceneSize::FULL);
    (scene.geometry, scene.phantom)
}

pub fn default_convex_scene(seed: u64) -> (TransducerGeometry, Phantom) {
    let scene = convex_scene(seed, SceneSize::FULL);
    (scene.geometry, scene.phantom)
}

/// Linear array at 8.48 MHz with one element per scan line.
pub fn linear_scene(seed: u64, size: SceneSize) -> Scene {
    let pitch = 0.1e-3;
    let geometry = TransducerGeometry::linear(size.num_sc, pitch, LINEAR_CENTER_FREQ);
    let acquisition = acquisition_for(size);
    let max_depth = acquisition.max_depth_m(DEFAULT_SOUND_SPEED);
    let half_width = (size.num_sc as f64 - 1.0) / 2.0 * pitch;
    let mut rng = seeding::stream(seeding::derive(seed, "linear-scene"), 0);
    let mut scatterers = random_points(&mut rng, |rng| {
        (
            rng.gen_range(-half_width..half_width),
            rng.gen_range(0.1 * max_depth..0.9 * max_depth),
        )
    });
    for i in 0..3 {
        let frac = (i as f64 + 1.0) / 4.0;
        scatterers.push(Scatterer {
            x_m: rng.gen_range(-0.5 * half_width..0.5 * half_width),
            z_m: (0.15 + 0.7 * frac) * max_depth,
            amplitude: 3.0,
        });
    }
    Scene {
        geometry,
        phantom: Phantom::new(scatterers),
        acquisition,
        seed,
    }
}

/// Convex array at 3.2 MHz with two scan lines per element; scatterers fill
/// the imaged sector.
pub fn convex_scene(seed: u64, size: SceneSize) -> Scene {
    let (pitch, radius) = (0.2e-3, 60e-3);
    let elements = (size.num_sc / 2).max(size.num_rx);
    let geometry = TransducerGeometry::convex(elements, pitch, radius, CONVEX_CENTER_FREQ);
    let acquisition = acquisition_for(size);
    let max_depth = acquisition.max_depth_m(DEFAULT_SOUND_SPEED);
    let half_angle = (elements as f64 - 1.0) / 2.0 * geometry.angular_pitch();
    let mut rng = seeding::stream(seeding::derive(seed, "convex-scene"), 0);
    // Polar placement about the arc center, then mapped to (x, z).
    let polar = |theta: f64, depth: f64| {
        let rr = radius + depth;
        (rr * theta.sin(), rr * theta.cos() - radius)
    };
    // Shallow points near the sector edges can sit above the apex; redraw
    // until the point lies inside the imaging depth.
    let mut scatterers = random_points(&mut rng, |rng| loop {
        let theta = rng.gen_range(-half_angle..half_angle);
        let depth = rng.gen_range(0.1 * max_depth..0.8 * max_depth);
        let (x, z) = polar(theta, depth);
        if z >= 0.05 * max_depth {
            break (x, z);
        }
    });
    for i in 0..3 {
        let frac = (i as f64 + 1.0) / 4.0;
        let (x, z) = polar(
            rng.gen_range(-0.5 * half_angle..0.5 * half_angle),
            (0.15 + 0.6 * frac) * max_depth,
        );
        scatterers.push(Scatterer {
            x_m: x,
            z_m: z,
            amplitude: 3.0,
        });
    }
    Scene {
        geometry,
        phantom: Phantom::new(scatterers),
        acquisition,
        seed,
    }
}

fn acquisition_for(size: SceneSize) -> Acquisition {
    Acquisition {
        depth_samples: size.depth_samples,
        num_rx: size.num_rx,
        num_sc: size.num_sc,
        sampling_freq_hz: DEFAULT_SAMPLING_FREQ,
        noise_sigma: DEFAULT_NOISE_SIGMA,
    }
}

fn random_points<R: Rng>(rng: &mut R, mut place: impl FnMut(&mut R) -> (f64, f64)) -> Vec<Scatterer> {
    let count = rng.gen_range(20..=60);
    (0..count)
        .map(|_| {
            let (x_m, z_m) = place(rng);
            let magnitude = rng.gen_range(0.2..1.0);
            let amplitude = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
            Scatterer {
                x_m,
                z_m,
                amplitude,
            }
        })
        .collect()
}

/// Parses the plain-text scene format: `key = value` lines, one scatterer per
/// line as `x_m z_m amp`, `#` comments.
///
/// Recognized keys: `kind`, `num_elements`, `pitch_m`, `radius_m`,
/// `center_freq_hz`, `fractional_bandwidth`, `sound_speed_m_s`,
/// `depth_samples`, `num_rx`, `num_sc`, `sampling_freq_hz`, `noise_sigma`,
/// `seed`. Missing keys fall back to the toy linear defaults.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut scene = linear_scene(0, SceneSize::TOY);
    scene.phantom.scatterers.clear();
    let mut kind_set = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Format(format!("scene line {}: {msg}", lineno + 1));
        if let Some((key, value)) = line.split_once('=') {
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
            let int = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            match key {
                "kind" => {
                    scene.geometry.kind = value.parse()?;
                    kind_set = true;
                }
                "num_elements" => scene.geometry.num_elements = int(value)?,
                "pitch_m" => scene.geometry.pitch_m = num(value)?,
                "radius_m" => scene.geometry.radius_m = num(value)?,
                "center_freq_hz" => scene.geometry.center_freq_hz = num(value)?,
                "fractional_bandwidth" => scene.geometry.fractional_bandwidth = num(value)?,
                "sound_speed_m_s" => scene.phantom.sound_speed_m_s = num(value)?,
                "depth_samples" => scene.acquisition.depth_samples = int(value)?,
                "num_rx" => scene.acquisition.num_rx = int(value)?,
                "num_sc" => scene.acquisition.num_sc = int(value)?,
                "sampling_freq_hz" => scene.acquisition.sampling_freq_hz = num(value)?,
                "noise_sigma" => scene.acquisition.noise_sigma = num(value)?,
                "seed" => {
                    scene.seed = value
                        .parse()
                        .map_err(|e| bad(format!("seed: {e}")))?
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        } else {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad("expected `x_m z_m amp`".into()));
            }
            let parse = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
            scene.phantom.scatterers.push(Scatterer {
                x_m: parse(fields[0])?,
                z_m: parse(fields[1])?,
                amplitude: parse(fields[2])?,
            });
        }
    }
    if kind_set && scene.geometry.kind == ArrayKind::Convex && scene.geometry.radius_m == 0.0 {
        return Err(Error::Parameter("convex scene requires radius_m".into()));
    }
    scene.geometry.validate()?;
    Ok(scene)
}

pub fn format_scene(scene: &Scene) -> String {
    let g = &scene.geometry;
    let a = &scene.acquisition;
    let mut out = String::new();
    let _ = writeln!(out, "kind = {}", g.kind);
    let _ = writeln!(out, "num_elements = {}", g.num_elements);
    let _ = writeln!(out, "pitch_m = {:e}", g.pitch_m);
    let _ = writeln!(out, "radius_m = {:e}", g.radius_m);
    let _ = writeln!(out, "center_freq_hz = {:e}", g.center_freq_hz);
    let _ = writeln!(out, "fractional_bandwidth = {}", g.fractional_bandwidth);
    let _ = writeln!(out, "sound_speed_m_s = {}", scene.phantom.sound_speed_m_s);
    let _ = writeln!(out, "depth_samples = {}", a.depth_samples);
    let _ = writeln!(out, "num_rx = {}", a.num_rx);
    let _ = writeln!(out, "num_sc = {}", a.num_sc);
    let _ = writeln!(out, "sampling_freq_hz = {:e}", a.sampling_freq_hz);
    let _ = writeln!(out, "noise_sigma = {:e}", a.noise_sigma);
    let _ = writeln!(out, "seed = {}", scene.seed);
    for s in &scene.phantom.scatterers {
        let _ = writeln!(out, "{:e} {:e} {:e}", s.x_m, s.z_m, s.amplitude);
    }
    out
}
