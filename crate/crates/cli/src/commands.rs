use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use mvmos_core::image::{write_pgm, write_raw_f32};
use mvmos_core::io::{
    decode_prediction, encode_prediction, frame_name, list_frames, read_calib_tr, read_labels, read_point_cloud_bin,
    read_poses, remap_mos, synth_sequence, write_labels, write_point_cloud_bin, write_poses, PointCloud, Pose,
    SyntheticSceneSpec,
};
use mvmos_core::loss::{ConfusionCounts, EvalReport};
use mvmos_core::network::{Network, WeightStore};
use mvmos_core::pipeline::{infer_sequence, prepare_frame};
use mvmos_core::selfcheck::{render_table, run_selected, SelfcheckOptions};
use mvmos_core::{Error, Exec, Tensor};
use serde_json::json;

use crate::{Cli, CliError, Command, Fault, FlagOverrides, RunConfig};

pub fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let flags = FlagOverrides {
        profile: cli.profile.map(Into::into),
        seed: cli.seed,
        zero_pad: cli.zero_pad,
        dump_images: cli.dump_images,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &flags)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::Synth(a) => cmd_synth(a.spec.as_deref(), &a.out, cli.seed, out),
        Command::Infer(a) => {
            let seq = required(a.sequence.as_ref(), cfg.sequence.as_ref(), "--sequence")?;
            let dir = required(a.out.as_ref(), cfg.output.as_ref(), "--out")?;
            let weights = a.weights.as_ref().or(cfg.weights.as_ref());
            cmd_infer(&cfg, &seq, weights.map(PathBuf::as_path), &dir, exec, out, err)
        }
        Command::Eval(a) => cmd_eval(&a.pred_dir, &a.gt_dir, out),
        Command::Residual(a) => {
            let seq = required(a.sequence.as_ref(), cfg.sequence.as_ref(), "--sequence")?;
            let dir = required(a.out.as_ref(), cfg.output.as_ref(), "--out")?;
            cmd_residual(&cfg, &seq, a.frame, &dir, exec, out)
        }
        Command::Selfcheck(a) => {
            let opts = SelfcheckOptions {
                seed: cfg.seed,
                exec,
                inject_flip_scan: a.inject_fault == Some(Fault::FlipScan),
            };
            cmd_selfcheck(&opts, a.only.as_deref(), out, err)
        }
        Command::InitWeights(a) => {
            WeightStore::random(&cfg.network, cfg.seed).write(&a.out)?;
            writeln!(out, "{}", a.out.display()).ok();
            Ok(())
        }
    }
}

fn required(flag: Option<&PathBuf>, file: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(file)
        .cloned()
        .ok_or_else(|| CliError::usage(format!("{name} is required (flag or config key)")))
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Data(Error::Io { path: p.to_path_buf(), source: e }))
}

/// Writes `velodyne/`, `labels/`, `poses.txt` and an identity `calib.txt`.
pub fn cmd_synth(spec: Option<&Path>, dir: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(Error::Io { path: p.to_path_buf(), source: e }))?;
            serde_json::from_str::<SyntheticSceneSpec>(&text).map_err(|e| {
                CliError::Data(Error::Malformed { path: p.to_path_buf(), reason: e.to_string() })
            })?
        }
        None => SyntheticSceneSpec::random(seed.unwrap_or(0)),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let frames = synth_sequence(&spec)?;
    mkdir(&dir.join("velodyne"))?;
    mkdir(&dir.join("labels"))?;
    for (i, f) in frames.iter().enumerate() {
        write_point_cloud_bin(dir.join("velodyne").join(format!("{}.bin", frame_name(i))), &f.cloud)?;
        let labels = f.cloud.labels.as_deref().expect("synthetic clouds carry labels");
        write_labels(dir.join("labels").join(format!("{}.label", frame_name(i))), labels)?;
    }
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    write_poses(dir.join("poses.txt"), &poses)?;
    let calib = dir.join("calib.txt");
    std::fs::write(&calib, "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n").map_err(|e| CliError::Data(Error::Io { path: calib, source: e }))?;
    writeln!(out, "{} frames written to {}", frames.len(), dir.display()).ok();
    Ok(())
}

pub struct Sequence {
    pub names: Vec<String>,
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<Pose>,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads `velodyne/*.bin` and `poses.txt`, converting poses with
/// `calib.txt` when present.
pub fn load_sequence(dir: &Path) -> Result<Sequence, CliError> {
    let files = list_frames(&dir.join("velodyne"), "bin")?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no frames in {}", dir.join("velodyne").display())).into());
    }
    let calib_path = dir.join("calib.txt");
    let calib = if calib_path.exists() { Some(read_calib_tr(&calib_path)?) } else { None };
    let poses = read_poses(dir.join("poses.txt"), calib.as_ref())?;
    if poses.len() < files.len() {
        return Err(Error::InvalidArgument(format!("{} frames but only {} poses", files.len(), poses.len())).into());
    }
    let clouds = files.iter().map(read_point_cloud_bin).collect::<Result<Vec<_>, _>>()?;
    Ok(Sequence {
        names: files.iter().map(|p| stem(p)).collect(),
        clouds,
        poses: poses[..files.len()].to_vec(),
    })
}

fn class_map(cells: &[mvmos_core::io::MosLabel], h: usize, w: usize) -> Tensor {
    Tensor::new(vec![1, h, w], cells.iter().map(|c| *c as u8 as f32).collect()).expect("finite")
}

pub fn cmd_infer(
    cfg: &RunConfig,
    seq_dir: &Path,
    weights: Option<&Path>,
    dir: &Path,
    exec: Exec,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let store = match weights {
        Some(p) => WeightStore::read(p)?,
        None => {
            writeln!(err, "note: no weights given, using random weights from seed {}", cfg.seed).ok();
            WeightStore::random(&cfg.network, cfg.seed)
        }
    };
    let net = Network::new(cfg.network.clone(), cfg.projection.clone(), store)?.with_exec(exec);
    let seq = load_sequence(seq_dir)?;
    let preds = infer_sequence(&net, &seq.clouds, &seq.poses, cfg.zero_pad, exec)?;
    let pred_dir = dir.join("predictions");
    mkdir(&pred_dir)?;
    let img_dir = dir.join("images");
    if cfg.dump_images {
        mkdir(&img_dir)?;
    }
    let (bh, bw) = (cfg.projection.bev.height, cfg.projection.bev.width);
    for (p, name) in preds.iter().zip(&seq.names) {
        let labels: Vec<u32> = p.points.iter().map(|l| encode_prediction(*l)).collect();
        write_labels(pred_dir.join(format!("{name}.label")), &labels)?;
        if cfg.dump_images {
            write_pgm(&img_dir.join(format!("{name}_residual.pgm")), &p.inputs.stack.bev)?;
            write_pgm(&img_dir.join(format!("{name}_prediction.pgm")), &class_map(&p.cells, bh, bw))?;
        }
    }
    writeln!(out, "{} frames predicted into {}", preds.len(), pred_dir.display()).ok();
    Ok(())
}

fn label_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let sub = dir.join("labels");
    Ok(list_frames(if sub.is_dir() { &sub } else { dir }, "label")?)
}

pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport, CliError> {
    let preds = label_files(pred_dir)?;
    let gts = label_files(gt_dir)?;
    let ps: BTreeSet<String> = preds.iter().map(|p| stem(p)).collect();
    let gs: BTreeSet<String> = gts.iter().map(|p| stem(p)).collect();
    if ps != gs || ps.is_empty() {
        let missing: Vec<&String> = gs.symmetric_difference(&ps).take(5).collect();
        return Err(Error::InvalidArgument(format!(
            "frame sets differ ({} predicted, {} ground truth; first differences {missing:?})",
            ps.len(),
            gs.len()
        ))
        .into());
    }
    let mut counts = ConfusionCounts::default();
    for (p, g) in preds.iter().zip(&gts) {
        let pred: Vec<_> = read_labels(p)?.into_iter().map(decode_prediction).collect();
        let gt: Vec<_> = read_labels(g)?.into_iter().map(remap_mos).collect();
        counts
            .accumulate(&pred, &gt)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", stem(p))))?;
    }
    Ok(EvalReport::new(&counts, preds.len()))
}

pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let report = eval_dirs(pred_dir, gt_dir)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serialisable")).ok();
    Ok(())
}

pub fn cmd_residual(
    cfg: &RunConfig,
    seq_dir: &Path,
    frame: Option<usize>,
    dir: &Path,
    exec: Exec,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let seq = load_sequence(seq_dir)?;
    let k = frame.unwrap_or(seq.clouds.len() - 1);
    if k >= seq.clouds.len() {
        return Err(Error::InvalidArgument(format!("frame {k} out of range ({} frames)", seq.clouds.len())).into());
    }
    let window = cfg.network.window;
    if !cfg.zero_pad && k < window {
        return Err(Error::InsufficientHistory { needed: window + 1, available: k + 1 }.into());
    }
    let lo = k.saturating_sub(window);
    let inputs = prepare_frame(exec, &seq.clouds[lo..=k], &seq.poses[lo..=k], &cfg.projection, window, 1)?;
    mkdir(dir)?;
    let name = &seq.names[k];
    let (rv, _) = write_raw_f32(&dir.join(format!("{name}_residual_rv")), &inputs.stack.rv)?;
    let (bev, _) = write_raw_f32(&dir.join(format!("{name}_residual_bev")), &inputs.stack.bev)?;
    let mut files = vec![rv.display().to_string(), bev.display().to_string()];
    if cfg.dump_images {
        for (view, t) in [("rv", &inputs.stack.rv), ("bev", &inputs.stack.bev)] {
            let p = dir.join(format!("{name}_residual_{view}.pgm"));
            write_pgm(&p, t)?;
            files.push(p.display().to_string());
        }
    }
    let summary = json!({
        "frame": name,
        "window": window,
        "channel_valid": inputs.stack.channel_valid,
        "rv_shape": inputs.stack.rv.shape(),
        "bev_shape": inputs.stack.bev.shape(),
        "files": files,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("serialisable")).ok();
    Ok(())
}

pub fn cmd_selfcheck(opts: &SelfcheckOptions, only: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let results = run_selected(opts, |n| only.is_none_or(|o| n.contains(o)));
    if results.is_empty() {
        return Err(CliError::usage(format!("no check matches `{}`", only.unwrap_or_default())));
    }
    write!(out, "{}", render_table(&results)).ok();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(());
    }
    for r in &failed {
        let case = json!({"check": r.name, "case": r.failing_case});
        writeln!(err, "{}", serde_json::to_string(&case).expect("serialisable")).ok();
    }
    let names: Vec<&str> = failed.iter().map(|r| r.name).collect();
    Err(CliError::Check(format!("failed checks: {}", names.join(", "))))
}
