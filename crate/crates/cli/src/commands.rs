use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rayon::prelude::*;

use rfinterp::beamform::{bmode, save_image, save_png, scan_convert};
use rfinterp::completion::complete_plane;
use rfinterp::data::{apply_mask_cube, extract_plane, load_cube, load_mask, make_mask, save_cube, save_mask};
use rfinterp::eval::{
    build_dataset, make_scenes, run_comparison, run_universality, split_scenes, ExperimentReport, Method, Model,
    ModelInfo,
};
use rfinterp::framelets::{decode, encode, FilterBank, FramePair};
use rfinterp::hankel::{hankel_lift, numerical_rank};
use rfinterp::neural::{interpolate_cube, load_model, save_model, train_from, ParameterSet};
use rfinterp::phantom::{format_scene, parse_scene, ArrayKind, Scene};

use crate::config::PipelineConfig;
use crate::{CliError, Command};

/// Files a command reads and writes; the first output is the primary one.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, CliError> {
    path.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {flag} (flag or [paths] entry)")))
}

fn with_path<T>(path: &Path, r: rfinterp::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn stage<T>(name: &str, r: rfinterp::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime(e.at_stage(name).to_string()))
}

pub fn plan(cmd: &Command, cfg: &PipelineConfig) -> Result<Plan, CliError> {
    let p = &cfg.paths;
    let mut plan = Plan::default();
    match cmd {
        Command::Simulate(a) => {
            plan.outputs.push(require(&p.out, "--out")?.clone());
            plan.outputs.extend(a.scene_out.clone());
            plan.inputs.extend(p.scene.clone());
        }
        Command::Mask(a) => {
            plan.outputs.push(require(&p.out, "--out")?.clone());
            plan.inputs.extend(p.input.clone());
            if let Some(m) = &a.masked_out {
                if p.input.is_none() {
                    return Err(CliError::Usage("--masked-out needs --input".into()));
                }
                plan.outputs.push(m.clone());
            }
        }
        Command::Complete(_) | Command::Interpolate(_) => {
            if matches!(cmd, Command::Interpolate(_)) {
                plan.inputs.push(require(&p.model, "--model")?.clone());
            }
            plan.inputs.push(require(&p.input, "--input")?.clone());
            plan.inputs.push(require(&p.mask, "--mask")?.clone());
            plan.outputs.push(require(&p.out, "--out")?.clone());
        }
        Command::Train(_) => {
            cfg.network.check()?;
            plan.outputs.push(require(&p.out, "--out")?.clone());
        }
        Command::Beamform(a) => {
            plan.inputs.push(require(&p.input, "--input")?.clone());
            plan.inputs.extend(p.scene.clone());
            plan.outputs.push(require(&p.out, "--out")?.clone());
            plan.outputs.extend(a.raw.clone());
        }
        Command::Evaluate(_) | Command::Universality(_) => {
            let universality = matches!(cmd, Command::Universality(_));
            match &p.model {
                Some(m) => plan.inputs.push(m.clone()),
                None if universality => return Err(CliError::Usage("missing --model".into())),
                None if cfg.report.methods.contains(&Method::Cnn) => {
                    return Err(CliError::Usage(
                        "method cnn needs --model (or pass --methods without cnn)".into(),
                    ))
                }
                None => {}
            }
            if !universality {
                plan.inputs.extend(p.scene.clone());
            }
            plan.outputs.push(require(&p.out, "--out")?.join("report.json"));
        }
        Command::FrameletCheck(_) => {
            plan.inputs.push(require(&p.input, "--input")?.clone());
            plan.inputs.extend(p.mask.clone());
            plan.outputs.extend(p.out.clone());
        }
    }
    Ok(plan)
}

fn read_scene(path: &Path) -> Result<Scene, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    with_path(path, parse_scene(&text))
}

fn configured_scene(cfg: &PipelineConfig) -> Result<Scene, CliError> {
    match &cfg.paths.scene {
        Some(path) => read_scene(path),
        None => Ok(cfg.scene.scene(cfg.scene.geometry, cfg.seed)),
    }
}

fn load_net(path: &Path) -> Result<(rfinterp::neural::NetworkSpec, ParameterSet), CliError> {
    with_path(path, load_model(path))
}

pub fn execute(cmd: &Command, cfg: &PipelineConfig, plan: &Plan) -> Result<(), CliError> {
    let p = &cfg.paths;
    match cmd {
        Command::Simulate(a) => {
            let scene = configured_scene(cfg)?;
            let cube = stage("simulate", scene.simulate())?;
            with_path(&plan.outputs[0], save_cube(&cube, &plan.outputs[0]))?;
            if let Some(path) = &a.scene_out {
                std::fs::write(path, format_scene(&scene)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
            eprintln!(
                "simulate: {} x {} x {} cube, {} scatterers",
                cube.depth_samples(),
                cube.num_rx(),
                cube.num_sc(),
                scene.phantom.scatterers.len()
            );
        }
        Command::Mask(a) => {
            let cube = match &p.input {
                Some(path) => Some(with_path(path, load_cube(path))?),
                None => None,
            };
            let size = cfg.scene.size.size();
            let rx = a.rx.or(cube.as_ref().map(|c| c.num_rx())).unwrap_or(size.num_rx);
            let sc = a.sc.or(cube.as_ref().map(|c| c.num_sc())).unwrap_or(size.num_sc);
            let mask = stage("mask", make_mask(rx, sc, cfg.mask.ratio, cfg.seed))?;
            with_path(&plan.outputs[0], save_mask(&mask, &plan.outputs[0]))?;
            if let (Some(cube), Some(out)) = (cube, &a.masked_out) {
                let masked = stage("mask", apply_mask_cube(&cube, &mask))?;
                with_path(out, save_cube(&masked, out))?;
            }
            eprintln!("mask: {rx} x {sc}, {} receivers per scan line", mask.per_column());
        }
        Command::Complete(_) => {
            let (input, mask_path) = (&plan.inputs[0], &plan.inputs[1]);
            let cube = with_path(input, load_cube(input))?;
            let mask = with_path(mask_path, load_mask(mask_path))?;
            let masked = stage("complete", apply_mask_cube(&cube, &mask))?;
            let done = (0..masked.depth_samples())
                .into_par_iter()
                .map(|k| {
                    let plane = extract_plane(&masked, k)?;
                    Ok(complete_plane(&plane, &mask, &cfg.completion)?.plane)
                })
                .collect::<rfinterp::Result<Vec<_>>>();
            let mut samples = masked.samples().clone();
            for (k, plane) in stage("complete", done)?.iter().enumerate() {
                samples.index_axis_mut(Axis(0), k).assign(&plane.values);
            }
            let out = stage("complete", masked.with_samples(samples))?;
            with_path(&plan.outputs[0], save_cube(&out, &plan.outputs[0]))?;
        }
        Command::Train(_) => {
            let spec = cfg.network.build()?;
            let scenes = make_scenes(cfg.scene.geometry, cfg.scene.count, cfg.seed, cfg.scene.size.size());
            let split = stage(
                "train",
                split_scenes(cfg.scene.count, cfg.scene.train_frac, cfg.scene.val_frac, cfg.seed),
            )?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| scenes[i].clone()).collect::<Vec<_>>();
            let data_cfg = cfg.dataset();
            let train_set = stage("train dataset", build_dataset(&pick(&split.train), &data_cfg))?;
            let val_set = stage("train dataset", build_dataset(&pick(&split.validation), &data_cfg))?;
            eprintln!(
                "train: {} training / {} validation planes ({})",
                train_set.len(),
                val_set.len(),
                split.describe()
            );
            let tcfg = cfg.train_config();
            let (params, _) = stage(
                "train",
                train_from(&spec, ParameterSet::init(&spec, tcfg.seed), &train_set, &val_set, &tcfg, |r| {
                    let val = r.validation_loss.map_or("-".to_string(), |v| format!("{v:.4e}"));
                    eprintln!("epoch {:>4}  loss {:.4e}  val {val}  lr {:.2e}", r.epoch, r.loss, r.learning_rate)
                }),
            )?;
            with_path(&plan.outputs[0], save_model(&spec, &params, &plan.outputs[0]))?;
        }
        Command::Interpolate(_) => {
            let (spec, params) = load_net(&plan.inputs[0])?;
            let cube = with_path(&plan.inputs[1], load_cube(&plan.inputs[1]))?;
            let mask = with_path(&plan.inputs[2], load_mask(&plan.inputs[2]))?;
            let masked = stage("interpolate", apply_mask_cube(&cube, &mask))?;
            let out = stage("interpolate", interpolate_cube(&spec, &params, &masked, &mask))?;
            with_path(&plan.outputs[0], save_cube(&out, &plan.outputs[0]))?;
        }
        Command::Beamform(a) => {
            let cube = with_path(&plan.inputs[0], load_cube(&plan.inputs[0]))?;
            let scene = configured_scene(cfg)?;
            let b = &cfg.beamform;
            let img = stage("beamform", bmode(&cube, &scene.geometry, b.apodization, b.dynamic_range_db))?;
            let shown = match scene.geometry.kind {
                ArrayKind::Linear => img.values.clone(),
                ArrayKind::Convex => stage("beamform", scan_convert(&img, &scene.geometry))?.values,
            };
            with_path(&plan.outputs[0], save_png(&shown, b.dynamic_range_db, &plan.outputs[0]))?;
            if let Some(raw) = &a.raw {
                with_path(raw, save_image(&img.values, raw))?;
            }
        }
        Command::Evaluate(_) | Command::Universality(_) => {
            let out_dir = plan.outputs[0].parent().expect("report inside a directory");
            std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
            let net = match &p.model {
                Some(path) => Some(load_net(path)?),
                None => None,
            };
            let info = net.as_ref().map(|(spec, _)| ModelInfo::of(spec));
            let model = net.as_ref().zip(info.as_ref()).map(|((spec, params), info)| Model { spec, params, info });
            let compare = cfg.comparison();
            let size = cfg.scene.size.size();
            let report = if let Command::Universality(a) = cmd {
                let scenes = make_scenes(a.test_geometry, cfg.report.universality_scenes, cfg.seed, size);
                let model = model.expect("checked in plan");
                stage(
                    "universality",
                    run_universality(&compare, &scenes, model, cfg.scene.geometry, Some(out_dir)),
                )?
            } else {
                let (scenes, split) = match &p.scene {
                    Some(path) => (vec![read_scene(path)?], None),
                    None => {
                        let all = make_scenes(cfg.scene.geometry, cfg.scene.count, cfg.seed, size);
                        let split = stage(
                            "evaluate",
                            split_scenes(cfg.scene.count, cfg.scene.train_frac, cfg.scene.val_frac, cfg.seed),
                        )?;
                        (split.test.iter().map(|&i| all[i].clone()).collect(), Some(split))
                    }
                };
                let mut report = stage("evaluate", run_comparison(&compare, &scenes, model, Some(out_dir)))?;
                report.split = split.map(|s| s.describe());
                stage("evaluate", report.save(out_dir))?;
                report
            };
            print!("{}", summary(&report));
        }
        Command::FrameletCheck(a) => {
            let cube = with_path(&plan.inputs[0], load_cube(&plan.inputs[0]))?;
            let cube = match &p.mask {
                Some(path) => stage("framelet-check", apply_mask_cube(&cube, &with_path(path, load_mask(path))?))?,
                None => cube,
            };
            let depth = a.depth.unwrap_or(cube.depth_samples() / 2);
            let plane = stage("framelet-check", extract_plane(&cube, depth))?;
            let text = stage("framelet-check", framelet_table(&plane.values, cfg.completion.window, a.rank_tol))?;
            print!("{text}");
            if let Some(out) = &p.out {
                std::fs::write(out, &text).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
            }
        }
    }
    Ok(())
}

fn summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>8} {:>14} {:>14}", "method", "planes", "plane PSNR", "B-mode PSNR");
    for m in &report.methods {
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>11} dB {:>11} dB",
            m.method.to_string(),
            m.planes.len(),
            m.mean_plane_psnr_db.to_string(),
            m.mean_bmode_psnr_db.to_string()
        );
    }
    if let Some(f) = report.fraction_improved(Method::Cnn, Method::ZeroFilled) {
        let _ = writeln!(s, "cnn beats zero-filled on {:.1}% of planes", 100.0 * f);
    }
    s
}

/// One line per receiver row of `values`: Hankel rank along scan lines and
/// the worst perfect-reconstruction residual over a few frame pairs.
fn framelet_table(values: &ndarray::Array2<f64>, window: usize, rank_tol: f64) -> rfinterp::Result<String> {
    let (rows, n) = values.dim();
    let window = window.min(n);
    let pairs = [
        (FramePair::identity(n), FilterBank::orthonormal(window, 1, 0)),
        (FramePair::orthogonal(n, 1), FilterBank::redundant(window, 1, 2)),
        (FramePair::redundant(n, 3), FilterBank::haar()),
    ];
    let mut s = String::new();
    let _ = writeln!(s, "plane {rows} x {n}, window {window}, rank tolerance {rank_tol:e}");
    let _ = writeln!(s, "{:>4} {:>6} {:>12}", "rx", "rank", "pr residual");
    let (mut worst, mut ranks) = (0.0f64, Vec::with_capacity(rows));
    for r in 0..rows {
        let row: Vec<f64> = values.row(r).to_vec();
        let rank = if row.iter().all(|&v| v == 0.0) { 0 } else { numerical_rank(&hankel_lift(&row, window)?, rank_tol)? };
        let mut residual = 0.0f64;
        for (frame, bank) in &pairs {
            let back = decode(&encode(&row, frame, bank)?, frame, bank)?;
            residual = row.iter().zip(&back).fold(residual, |m, (a, b)| m.max((a - b).abs()));
        }
        worst = worst.max(residual);
        ranks.push(rank);
        let _ = writeln!(s, "{r:>4} {rank:>6} {residual:>12.3e}");
    }
    let mean = ranks.iter().sum::<usize>() as f64 / rows.max(1) as f64;
    let _ = writeln!(s, "mean rank {mean:.2} of {window}, worst pr residual {worst:.3e}");
    Ok(s)
}
