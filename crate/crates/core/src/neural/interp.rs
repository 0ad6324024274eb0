use ndarray::Array2;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::network::{forward, NetworkSpec, ParameterSet};
use super::train::{observed_scale, stack_inputs};
use crate::data::{check_mask_dims, extract_plane, insert_plane_in_place, RfCube, RxScPlane, SamplingMask};
use crate::error::{Error, Result};

/// Planes per forward pass in [`interpolate_cube`].
pub const INFERENCE_BATCH: usize = 16;

fn check_net(spec: &NetworkSpec) -> Result<()> {
    if spec.output_channels() != 1 {
        return Err(Error::shape("single-channel network output", spec.output_channels()));
    }
    if !(1..=2).contains(&spec.input_channels) {
        return Err(Error::shape("1 or 2 network input channels", spec.input_channels));
    }
    Ok(())
}

fn run_batch(
    spec: &NetworkSpec,
    params: &ParameterSet,
    planes: &[&Array2<f64>],
    mask: &SamplingMask,
) -> Result<Vec<Array2<f64>>> {
    let active = mask.active();
    let scales: Vec<f64> = planes.iter().map(|p| observed_scale(p, active)).collect();
    let normalized: Vec<Array2<f64>> = planes
        .iter()
        .zip(&scales)
        .map(|(p, &s)| if s > 0.0 { *p / s } else { (*p).clone() })
        .collect();
    let inputs: Vec<_> = normalized.iter().map(|p| (p, active)).collect();
    let out = forward(spec, params, &stack_inputs(&inputs, spec.input_channels)?)?;
    let (rx, sc) = active.dim();
    Ok(planes
        .iter()
        .zip(&scales)
        .enumerate()
        .map(|(b, (p, &s))| {
            if s == 0.0 {
                // nothing observed: leave the zero-filled plane alone
                return (*p).clone();
            }
            let pred = Array2::from_shape_vec((rx, sc), out.map(b, 0).to_vec()).expect("network preserves dims");
            Array2::from_shape_fn((rx, sc), |(r, c)| if active[(r, c)] { p[(r, c)] } else { pred[(r, c)] * s })
        })
        .collect())
}

/// Fills the missing receivers of a zero-filled plane. Observed entries are
/// copied from the input unchanged.
pub fn interpolate_plane(
    spec: &NetworkSpec,
    params: &ParameterSet,
    masked: &RxScPlane,
    mask: &SamplingMask,
) -> Result<RxScPlane> {
    check_net(spec)?;
    check_mask_dims(masked.values.dim(), mask)?;
    let mut out = run_batch(spec, params, &[&masked.values], mask)?;
    Ok(RxScPlane::new(out.pop().expect("one plane"), masked.depth_index))
}

/// [`interpolate_plane`] over every depth of a zero-filled cube.
pub fn interpolate_cube(spec: &NetworkSpec, params: &ParameterSet, masked: &RfCube, mask: &SamplingMask) -> Result<RfCube> {
    check_net(spec)?;
    check_mask_dims((masked.num_rx(), masked.num_sc()), mask)?;
    let depths: Vec<usize> = (0..masked.depth_samples()).collect();
    let chunks: Vec<&[usize]> = depths.chunks(INFERENCE_BATCH).collect();
    let work = |chunk: &&[usize]| -> Result<Vec<RxScPlane>> {
        let planes = chunk
            .iter()
            .map(|&k| extract_plane(masked, k))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Array2<f64>> = planes.iter().map(|p| &p.values).collect();
        Ok(run_batch(spec, params, &values, mask)?
            .into_iter()
            .zip(chunk.iter())
            .map(|(v, &k)| RxScPlane::new(v, k))
            .collect())
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<RxScPlane>>> = chunks.par_iter().map(work).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<RxScPlane>>> = chunks.iter().map(work).collect();
    let mut out = masked.clone();
    for planes in results {
        for p in planes? {
            let k = p.depth_index;
            insert_plane_in_place(&mut out, &p, k)?;
        }
    }
    Ok(out)
}
