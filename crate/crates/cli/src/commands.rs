use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use centripetal::encoder::{encode, EncoderConfig, RadiusPolicy, Scene, DEFAULT_STRIDE};
use centripetal::evaluator::{evaluate, EvalResult, GroundTruth};
use centripetal::geometry::Detection;
use centripetal::pipeline::{detect, DetectConfig, PipelineError};
use centripetal::plot::{dcn_scatter_svg, sweep_svg};
use centripetal::synthbench::{run_benchmark, BenchConfig, BenchReport};
use centripetal::tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{bench_strategies, RunConfig};
use crate::error::{Classify, CmdResult, Failure};
use crate::maps;

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CmdResult<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display())).input()?;
    serde_json::from_str(&text).with_context(|| format!("malformed {what} {}", path.display())).input()
}

/// Pretty JSON to `out`, or stdout when unset.
fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())).input(),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_encode(scene: &Path, out_dir: &Path, radius: Option<u32>, cfg: &RunConfig) -> CmdResult<()> {
    let scene: Scene = read_json(scene, "scene")?;
    let enc = EncoderConfig {
        stride: cfg.stride.unwrap_or(DEFAULT_STRIDE),
        radius: radius.map(RadiusPolicy::Fixed).unwrap_or_default(),
    };
    let targets = encode(&scene, &enc).context("invalid scene").input()?;
    let m = maps::write_targets(out_dir, &targets, scene.num_categories(), [scene.width, scene.height])?;
    log::info!("wrote {} tensors to {}", m.tensors.len(), out_dir.display());
    Ok(())
}

pub fn cmd_detect(dir: &Path, out: Option<&Path>, cfg: &RunConfig) -> CmdResult<()> {
    let manifest = maps::read_manifest(dir)?;
    if let Some(s) = cfg.stride {
        if s != manifest.stride {
            return Err(Failure::Config(anyhow!("--stride {s} conflicts with the maps' stride {}", manifest.stride)));
        }
    }
    let maps = maps::read_predictions(dir, &manifest)?;
    let dcfg = cfg.detect(DetectConfig::default())?;
    let boxes = detect(&maps, &dcfg).map_err(|e| match e {
        PipelineError::MissingEmbeddings(_)
        | PipelineError::EmbeddingChannels(..)
        | PipelineError::MissingRegression
        | PipelineError::MissingCenters => Failure::Config(e.into()),
        _ => Failure::Input(anyhow::Error::from(e).context("cannot decode maps")),
    })?;
    write_json(out, &boxes)
}

/// Scene files of a dataset directory, sorted by name.
fn dataset_files(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display())).input()?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.with_context(|| format!("listing {}", dir.display())).input()?.path();
        if p.extension().is_some_and(|x| x == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn scene_truth(path: &Path) -> CmdResult<Vec<GroundTruth>> {
    let scene: Scene = read_json(path, "scene")?;
    Ok(scene.objects.iter().map(GroundTruth::from).collect())
}

/// Pairs detections with ground truth: a single file pair, or two
/// directories matched by file name.
fn load_eval_inputs(dets: &Path, truth: &Path) -> CmdResult<(Vec<Vec<Detection>>, Vec<Vec<GroundTruth>>)> {
    if !truth.is_dir() {
        return Ok((vec![read_json(dets, "detections")?], vec![scene_truth(truth)?]));
    }
    if !dets.is_dir() {
        return Err(Failure::Input(anyhow!(
            "{} is a dataset directory, so {} must be a directory of detection files",
            truth.display(),
            dets.display()
        )));
    }
    let (mut all_dets, mut all_gts) = (Vec::new(), Vec::new());
    for scene in dataset_files(truth)? {
        let name = scene.file_name().expect("listed file");
        let det_path = dets.join(name);
        let d: Vec<Detection> = if det_path.exists() {
            read_json(&det_path, "detections")?
        } else {
            log::warn!("no detections for {}; treating as empty", scene.display());
            Vec::new()
        };
        all_dets.push(d);
        all_gts.push(scene_truth(&scene)?);
    }
    Ok((all_dets, all_gts))
}

pub fn cmd_eval(dets: &Path, truth: &Path, out: Option<&Path>) -> CmdResult<()> {
    let (d, g) = load_eval_inputs(dets, truth)?;
    let gt_cats: BTreeSet<u32> = g.iter().flatten().map(|x| x.category).collect();
    let det_cats: BTreeSet<u32> = d.iter().flatten().map(|x| x.category).collect();
    let stray: Vec<u32> = det_cats.difference(&gt_cats).copied().collect();
    if !stray.is_empty() {
        log::warn!("detections use categories {stray:?} absent from the ground truth; they are not scored");
    }
    let result: EvalResult = evaluate(&d, &g);
    write_json(out, &result)
}

fn file_stem(name: &str) -> String {
    let s: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "row".into()
    } else {
        s
    }
}

/// One AP-vs-noise SVG per grid row.
fn write_sweep_plots(dir: &Path, report: &BenchReport) -> CmdResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).input()?;
    for (k, row) in report.rows.iter().enumerate() {
        let p = dir.join(format!("{k:02}_{}.svg", file_stem(&row.name)));
        std::fs::write(&p, sweep_svg(row)).with_context(|| format!("writing {}", p.display())).input()?;
    }
    Ok(())
}

pub struct DcnPlot<'a> {
    pub offsets: &'a Path,
    pub cells: &'a [(usize, usize)],
}

fn write_dcn_plot(dir: &Path, plot: &DcnPlot<'_>) -> CmdResult<()> {
    let off = Tensor::load(plot.offsets).with_context(|| format!("reading {}", plot.offsets.display())).input()?;
    let taps = off.channels() / 2;
    let k = (taps as f64).sqrt().round() as usize;
    if off.channels() % 2 != 0 || k * k != taps || k.is_multiple_of(2) {
        return Err(Failure::Input(anyhow!(
            "offset field has {} channels; expected 2*k*k for an odd kernel size k",
            off.channels()
        )));
    }
    let cells: Vec<(usize, usize)> =
        if plot.cells.is_empty() { vec![(off.height() / 2, off.width() / 2)] } else { plot.cells.to_vec() };
    if let Some(c) = cells.iter().find(|(i, j)| *i >= off.height() || *j >= off.width()) {
        return Err(Failure::Input(anyhow!(
            "cell {c:?} lies outside the {}x{} offset field",
            off.height(),
            off.width()
        )));
    }
    let p = dir.join("dcn_sampling.svg");
    std::fs::write(&p, dcn_scatter_svg(&off, k, &cells)).with_context(|| format!("writing {}", p.display())).input()
}

pub fn cmd_bench(config: &Path, out: Option<&Path>, dcn: Option<DcnPlot<'_>>, cfg: &RunConfig) -> CmdResult<()> {
    let mut bench: BenchConfig = read_json(config, "benchmark config")?;
    if let Some(s) = cfg.seed {
        bench.spec.seed = s;
    }
    if let Some(s) = cfg.stride {
        bench.spec.stride = s;
    }
    if cfg.no_timing {
        bench.timing = false;
    }
    bench.strategies = bench_strategies(cfg, bench.strategies);
    bench.detect = cfg.detect(bench.detect)?;
    bench.validate().context("invalid benchmark config").input()?;
    let report = run_benchmark(&bench).context("benchmark failed").input()?;
    write_json(out, &report)?;
    match (&cfg.plot, dcn) {
        (Some(dir), dcn) => {
            write_sweep_plots(dir, &report)?;
            if let Some(d) = dcn {
                write_dcn_plot(dir, &d)?;
            }
        }
        (None, Some(_)) => return Err(Failure::Config(anyhow!("--dcn-offsets needs --plot <dir>"))),
        (None, None) => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_names_become_safe_file_stems() {
        assert_eq!(file_stem("sigma cs/sweep"), "sigma_cs_sweep");
        assert_eq!(file_stem(""), "row");
    }
}
