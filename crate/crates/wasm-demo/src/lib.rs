//! Browser bindings: simulate a small linear-array scene, sub-sample its
//! receivers, fill one depth plane back in by low-rank completion, and view
//! the B-mode images.

use ndarray::Array2;
use wasm_bindgen::prelude::*;

use rfinterp::beamform::{bmode, to_gray8, Apodization};
use rfinterp::completion::{complete_plane, CompletionConfig};
use rfinterp::data::{apply_mask_cube, extract_plane, make_mask, RfCube, SamplingMask};
use rfinterp::eval::{bmode_intensity, psnr};
use rfinterp::hankel::LiftDirection;
use rfinterp::phantom::{linear_scene, Scene, SceneSize};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    full: RfCube,
    mask: SamplingMask,
    masked: RfCube,
    completed: Option<(usize, Array2<f64>)>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, ratio: usize, mask_seed: u32) -> Result<Demo, String> {
        let scene = linear_scene(u64::from(seed), SceneSize::TOY);
        let full = scene.simulate().map_err(err)?;
        let mask = make_mask(full.num_rx(), full.num_sc(), ratio, u64::from(mask_seed)).map_err(err)?;
        let masked = apply_mask_cube(&full, &mask).map_err(err)?;
        Ok(Demo {
            scene,
            full,
            mask,
            masked,
            completed: None,
        })
    }

    /// Draws a new receiver mask for the same scene.
    pub fn resample(&mut self, ratio: usize, mask_seed: u32) -> Result<(), String> {
        self.mask = make_mask(self.full.num_rx(), self.full.num_sc(), ratio, u64::from(mask_seed)).map_err(err)?;
        self.masked = apply_mask_cube(&self.full, &self.mask).map_err(err)?;
        self.completed = None;
        Ok(())
    }

    pub fn num_rx(&self) -> usize {
        self.full.num_rx()
    }

    pub fn num_sc(&self) -> usize {
        self.full.num_sc()
    }

    pub fn depth_samples(&self) -> usize {
        self.full.depth_samples()
    }

    pub fn per_column(&self) -> usize {
        self.mask.per_column()
    }

    /// Completes plane `depth` along receivers. Returns
    /// `[zero-filled PSNR, completed PSNR, total ADMM iterations over lines]`,
    /// PSNRs against the full plane.
    pub fn complete(&mut self, depth: usize, window: usize) -> Result<Vec<f64>, String> {
        let truth = extract_plane(&self.full, depth).map_err(err)?;
        let masked = extract_plane(&self.masked, depth).map_err(err)?;
        let cfg = CompletionConfig {
            window: window.clamp(1, self.mask.per_column()),
            direction: LiftDirection::Receiver,
            ..CompletionConfig::default()
        };
        let done = complete_plane(&masked, &self.mask, &cfg).map_err(err)?;
        let zero = psnr(&truth.values, &masked.values).map_err(err)?;
        let filled = psnr(&truth.values, &done.plane.values).map_err(err)?;
        let iterations = done.iterations as f64;
        self.completed = Some((depth, done.plane.values));
        Ok(vec![zero, filled, iterations])
    }

    /// Row-major `num_rx x num_sc` gray pixels of plane `depth` for
    /// `which` in `full | masked | completed`, mid-gray at zero.
    pub fn plane_pixels(&self, depth: usize, which: &str) -> Result<Vec<u8>, String> {
        let truth = extract_plane(&self.full, depth).map_err(err)?.values;
        let values = match which {
            "full" => truth.clone(),
            "masked" => extract_plane(&self.masked, depth).map_err(err)?.values,
            "completed" => match &self.completed {
                Some((d, v)) if *d == depth => v.clone(),
                _ => return Err(format!("plane {depth} has not been completed")),
            },
            other => return Err(format!("unknown plane `{other}`")),
        };
        let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        Ok(values
            .iter()
            .map(|v| (127.5 + 127.5 * (v / peak).clamp(-1.0, 1.0)).round() as u8)
            .collect())
    }

    /// Row-major `depth_samples x num_sc` B-mode pixels of the full or
    /// zero-filled cube.
    pub fn bmode_pixels(&self, which: &str, dynamic_range_db: f64) -> Result<Vec<u8>, String> {
        let cube = self.cube(which)?;
        let img = bmode(cube, &self.scene.geometry, Apodization::None, dynamic_range_db).map_err(err)?;
        Ok(to_gray8(&img.values, dynamic_range_db))
    }

    /// B-mode PSNR of the zero-filled image against the full one.
    pub fn bmode_psnr(&self, dynamic_range_db: f64) -> Result<f64, String> {
        let image = |c: &RfCube| bmode(c, &self.scene.geometry, Apodization::None, dynamic_range_db).map_err(err);
        let reference = bmode_intensity(&image(&self.full)?);
        let test = bmode_intensity(&image(&self.masked)?);
        psnr(&reference, &test).map_err(err)
    }
}

impl Demo {
    fn cube(&self, which: &str) -> Result<&RfCube, String> {
        match which {
            "full" => Ok(&self.full),
            "masked" => Ok(&self.masked),
            other => Err(format!("unknown image `{other}`")),
        }
    }
}
