//! Decode-and-match over a full set of prediction maps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{decode_corners, CornerMaps, DecodeConfig, DecodeError, DEFAULT_TOPK};
use crate::encoder::TargetMaps;
use crate::kernels::HeatActivation;
use crate::matcher::{match_corners, CenterCandidate, MatchConfig, MatchError, ScoredBox, Strategy};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("embeddings required for {0}")]
    MissingEmbeddings(&'static str),
    #[error("{0} needs {1}-channel embeddings, got {2}")]
    EmbeddingChannels(&'static str, usize, usize),
    #[error("linear center shifts required for center_regression")]
    MissingRegression,
    #[error("center candidates required for center_validation")]
    MissingCenters,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// Everything a detector head emits for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub stride: u32,
    pub heat_activation: HeatActivation,
    pub tl_heat: Tensor,
    pub br_heat: Tensor,
    pub tl_off: Tensor,
    pub br_off: Tensor,
    /// Log-space centripetal shifts.
    pub tl_cs: Tensor,
    pub br_cs: Tensor,
    /// Linear center shifts in stride units.
    pub tl_reg: Option<Tensor>,
    pub br_reg: Option<Tensor>,
    pub tl_emb: Option<Tensor>,
    pub br_emb: Option<Tensor>,
    pub centers: Option<Vec<CenterCandidate>>,
}

impl PredictionMaps {
    /// Treats exact encoder targets as predictions; heatmaps are used as
    /// probabilities directly.
    pub fn from_targets(t: &TargetMaps) -> Self {
        Self {
            stride: t.stride,
            heat_activation: HeatActivation::Identity,
            tl_heat: t.tl_heat.clone(),
            br_heat: t.br_heat.clone(),
            tl_off: t.tl_off.clone(),
            br_off: t.br_off.clone(),
            tl_cs: t.tl_cs.clone(),
            br_cs: t.br_cs.clone(),
            tl_reg: None,
            br_reg: None,
            tl_emb: None,
            br_emb: None,
            centers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub topk: usize,
    pub matching: MatchConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { topk: DEFAULT_TOPK, matching: MatchConfig::default() }
    }
}

fn leading_channels(t: &Tensor, n: usize) -> Tensor {
    let [_, h, w] = t.shape();
    Tensor::from_vec([n, h, w], t.data()[..n * h * w].to_vec()).expect("sliced shape")
}

fn embeddings(t: Option<&Tensor>, strategy: Strategy, dim: usize) -> Result<Tensor, PipelineError> {
    let t = t.ok_or(PipelineError::MissingEmbeddings(strategy.name()))?;
    if t.channels() < dim {
        return Err(PipelineError::EmbeddingChannels(strategy.name(), dim, t.channels()));
    }
    Ok(leading_channels(t, dim))
}

/// Decodes corners and runs the configured matcher.
pub fn detect(maps: &PredictionMaps, cfg: &DetectConfig) -> Result<Vec<ScoredBox>, PipelineError> {
    let strategy = cfg.matching.strategy;
    let (tl_shift, br_shift) = match strategy {
        Strategy::CenterRegression => (
            maps.tl_reg.as_ref().ok_or(PipelineError::MissingRegression)?,
            maps.br_reg.as_ref().ok_or(PipelineError::MissingRegression)?,
        ),
        _ => (&maps.tl_cs, &maps.br_cs),
    };
    let (tl_emb, br_emb) = match strategy.embedding_dim() {
        Some(d) => {
            (Some(embeddings(maps.tl_emb.as_ref(), strategy, d)?), Some(embeddings(maps.br_emb.as_ref(), strategy, d)?))
        }
        None => (None, None),
    };
    let centers = match strategy {
        Strategy::CenterValidation => Some(maps.centers.as_deref().ok_or(PipelineError::MissingCenters)?),
        _ => None,
    };
    let dcfg = DecodeConfig { stride: maps.stride, topk: cfg.topk, activation: maps.heat_activation };
    let (tls, brs) = decode_corners(
        CornerMaps { heat: &maps.tl_heat, off: &maps.tl_off, shift: tl_shift, emb: tl_emb.as_ref() },
        CornerMaps { heat: &maps.br_heat, off: &maps.br_off, shift: br_shift, emb: br_emb.as_ref() },
        &dcfg,
    )?;
    Ok(match_corners(&tls, &brs, centers, &cfg.matching, maps.stride as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, EncoderConfig, RadiusPolicy, Scene, SceneObject};
    use crate::geometry::{iou, BBox};

    fn scene() -> Scene {
        let b = |a, b, c, d| BBox::new(a, b, c, d).unwrap();
        Scene::with_objects(
            128,
            128,
            vec![
                SceneObject::new(b(4.0, 4.0, 40.0, 30.0), 0),
                SceneObject::new(b(50.0, 10.0, 100.0, 90.0), 1),
                SceneObject::new(b(10.0, 60.0, 45.0, 120.0), 1),
            ],
        )
    }

    #[test]
    fn exact_targets_give_exact_boxes() {
        let s = scene();
        let t = encode(&s, &EncoderConfig { stride: 4, radius: RadiusPolicy::Fixed(0) }).unwrap();
        let out = detect(&PredictionMaps::from_targets(&t), &DetectConfig::default()).unwrap();
        assert_eq!(out.len(), 3);
        for o in &s.objects {
            assert!(out.iter().any(|d| d.detection.category == o.category && iou(&d.detection.bbox, &o.bbox) >= 0.98));
        }
    }

    #[test]
    fn gaussian_targets_also_recover() {
        let s = scene();
        let t = encode(&s, &EncoderConfig::default()).unwrap();
        let out = detect(&PredictionMaps::from_targets(&t), &DetectConfig::default()).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let t = encode(&scene(), &EncoderConfig::default()).unwrap();
        let maps = PredictionMaps::from_targets(&t);
        let with = |strategy| DetectConfig {
            matching: MatchConfig { strategy, ..MatchConfig::default() },
            ..DetectConfig::default()
        };
        assert_eq!(
            detect(&maps, &with(Strategy::Associative1d)),
            Err(PipelineError::MissingEmbeddings("associative_1d"))
        );
        assert_eq!(detect(&maps, &with(Strategy::CenterRegression)), Err(PipelineError::MissingRegression));
        assert_eq!(detect(&maps, &with(Strategy::CenterValidation)), Err(PipelineError::MissingCenters));
        let mut one = maps.clone();
        one.tl_emb = Some(Tensor::zeros(1, 32, 32));
        one.br_emb = Some(Tensor::zeros(1, 32, 32));
        assert!(detect(&one, &with(Strategy::Associative1d)).is_ok());
        assert_eq!(
            detect(&one, &with(Strategy::Associative2d)),
            Err(PipelineError::EmbeddingChannels("associative_2d", 2, 1))
        );
    }

    #[test]
    fn empty_maps_give_no_detections() {
        let t = encode(&Scene::new(64, 64), &EncoderConfig::default()).unwrap();
        assert!(detect(&PredictionMaps::from_targets(&t), &DetectConfig::default()).unwrap().is_empty());
    }
}
