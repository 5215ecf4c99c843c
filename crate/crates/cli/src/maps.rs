//! On-disk layout of a map directory: one CTSR file per tensor plus
//! `manifest.json`.

use std::path::Path;

use anyhow::Context;
use centripetal::encoder::TargetMaps;
use centripetal::kernels::loss::MASK_SIDE;
use centripetal::kernels::HeatActivation;
use centripetal::matcher::CenterCandidate;
use centripetal::pipeline::PredictionMaps;
use centripetal::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CmdResult};

pub const MANIFEST: &str = "manifest.json";
pub const CENTERS: &str = "centers.json";

/// Tensors written by `encode`, in file order.
pub const TARGET_TENSORS: [&str; 8] =
    ["tl_heat", "br_heat", "tl_off", "br_off", "tl_cs", "br_cs", "tl_guide", "br_guide"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stride: u32,
    #[serde(default)]
    pub num_categories: Option<u32>,
    #[serde(default)]
    pub image_size: Option<[u32; 2]>,
    #[serde(default)]
    pub map_size: Option<[usize; 2]>,
    /// How `detect` turns heatmaps into scores.
    #[serde(default)]
    pub heat_activation: HeatActivation,
    /// Cells holding a top-left / bottom-right target, `[row, col]`.
    #[serde(default)]
    pub tl_valid: Vec<[usize; 2]>,
    #[serde(default)]
    pub br_valid: Vec<[usize; 2]>,
    /// Per object, whether `masks.ctsr` holds a mask for it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<bool>,
    pub tensors: Vec<String>,
}

fn tensor_file(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.ctsr"))
}

fn save(dir: &Path, name: &str, t: &Tensor) -> CmdResult<()> {
    let p = tensor_file(dir, name);
    t.save(&p).with_context(|| format!("writing {}", p.display())).input()
}

fn load(dir: &Path, name: &str) -> CmdResult<Tensor> {
    let p = tensor_file(dir, name);
    Tensor::load(&p).with_context(|| format!("reading {}", p.display())).input()
}

fn load_optional(dir: &Path, name: &str) -> CmdResult<Option<Tensor>> {
    if tensor_file(dir, name).exists() {
        load(dir, name).map(Some)
    } else {
        Ok(None)
    }
}

/// Writes every target tensor and the manifest.
pub fn write_targets(dir: &Path, t: &TargetMaps, num_categories: u32, image_size: [u32; 2]) -> CmdResult<Manifest> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).input()?;
    let tensors = [&t.tl_heat, &t.br_heat, &t.tl_off, &t.br_off, &t.tl_cs, &t.br_cs, &t.tl_guide, &t.br_guide];
    let mut names: Vec<String> = Vec::new();
    for (name, tensor) in TARGET_TENSORS.iter().zip(tensors) {
        save(dir, name, tensor)?;
        names.push(name.to_string());
    }
    let masks: Vec<bool> = t.masks.iter().map(Option::is_some).collect();
    if masks.iter().any(|m| *m) {
        let per = MASK_SIDE * MASK_SIDE;
        let mut data = vec![0.0f32; t.masks.len() * per];
        for (k, m) in t.masks.iter().enumerate() {
            if let Some(m) = m {
                data[k * per..(k + 1) * per].copy_from_slice(m);
            }
        }
        let stacked = Tensor::from_vec([t.masks.len(), MASK_SIDE, MASK_SIDE], data).expect("mask stack shape");
        save(dir, "masks", &stacked)?;
        names.push("masks".into());
    }
    let cells = |m: &centripetal::encoder::CellMask| m.cells().into_iter().map(|(i, j)| [i, j]).collect();
    let manifest = Manifest {
        stride: t.stride,
        num_categories: Some(num_categories),
        image_size: Some(image_size),
        map_size: Some([t.tl_heat.height(), t.tl_heat.width()]),
        heat_activation: HeatActivation::Identity,
        tl_valid: cells(&t.tl_valid),
        br_valid: cells(&t.br_valid),
        masks: if masks.iter().any(|m| *m) { masks } else { Vec::new() },
        tensors: names,
    };
    let p = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display())).input()?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> CmdResult<Manifest> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).input()?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", p.display())).input()
}

/// Loads prediction maps; regression, embedding and center inputs are
/// optional and only checked by the strategies that need them.
pub fn read_predictions(dir: &Path, manifest: &Manifest) -> CmdResult<PredictionMaps> {
    let centers = {
        let p = dir.join(CENTERS);
        if p.exists() {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).input()?;
            let c: Vec<CenterCandidate> =
                serde_json::from_str(&text).with_context(|| format!("malformed {}", p.display())).input()?;
            Some(c)
        } else {
            None
        }
    };
    Ok(PredictionMaps {
        stride: manifest.stride,
        heat_activation: manifest.heat_activation,
        tl_heat: load(dir, "tl_heat")?,
        br_heat: load(dir, "br_heat")?,
        tl_off: load(dir, "tl_off")?,
        br_off: load(dir, "br_off")?,
        tl_cs: load(dir, "tl_cs")?,
        br_cs: load(dir, "br_cs")?,
        tl_reg: load_optional(dir, "tl_reg")?,
        br_reg: load_optional(dir, "br_reg")?,
        tl_emb: load_optional(dir, "tl_emb")?,
        br_emb: load_optional(dir, "br_emb")?,
        centers,
    })
}
