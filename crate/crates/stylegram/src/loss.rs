//! Loss assembly: method presets, layer weighting, gradient masking, and
//! the composition of network and statistics into one objective with an
//! analytic pixel gradient.
//!
//! The objective is
//!
//! `alpha * sum_terms w_s * |G(I) - G(S)|^2 / N  +  sum_l w_c * |F_l(I) - F_l(C)|^2 / M_l`
//!
//! with `N = 4 M^2 * (product of the statistic's channel counts)` over the
//! statistic's grid of `M` positions and `M_l` the activation volume size.
//! Raw squared norms would make the style weight meaningless across layer
//! sizes; the default `alpha = 2e9` is calibrated against this
//! normalization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::network::{ActivationSet, Network, NetworkError};
use crate::statistics::{
    statistic_value, statistic_vjp, GramStatistic, StatError, StatInputs, StatLayers, StatParams,
    StatVariant,
};
use crate::tensor::{block_sum_downsample, nearest_upsample, ActivationVolume, TensorError};

pub const DEFAULT_STYLE_WEIGHT: f64 = 2e9;
pub const DEFAULT_ITERATIONS: usize = 270;
pub const DEFAULT_IMAGE_SIDE: usize = 512;
pub const DEFAULT_SHIFT: f64 = -1.0;
pub const DEFAULT_AMPLIFY_POWER: f64 = 1.5;
/// Keep fractions for the masked preset, one per classic style layer.
pub const DEFAULT_MASK_KEEP: [f64; 5] = [1.0, 0.4, 0.2, 0.1, 0.1];

#[derive(Debug)]
pub enum LossError {
    UnknownMethod(String),
    UnknownLayer(String),
    DuplicateIndex(usize),
    IndexRange(usize),
    /// Style representation key does not match the configured term.
    KeyMismatch {
        term: usize,
        detail: String,
    },
    BadKeepFraction(f64),
    EmptyVolume,
    BadConfig(String),
    Json(String),
    Stat(StatError),
    Network(NetworkError),
    Tensor(TensorError),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::UnknownMethod(name) => write!(f, "unknown method {name:?}"),
            LossError::UnknownLayer(name) => {
                write!(f, "configuration names unknown layer {name:?}")
            }
            LossError::DuplicateIndex(i) => write!(f, "duplicate layer index {i}"),
            LossError::IndexRange(i) => write!(f, "layer index {i} outside 1..=16"),
            LossError::KeyMismatch { term, detail } => {
                write!(f, "style term {term} does not match its target: {detail}")
            }
            LossError::BadKeepFraction(v) => {
                write!(f, "keep fraction {v} outside (0, 1]")
            }
            LossError::EmptyVolume => write!(f, "mask source volume is empty"),
            LossError::BadConfig(msg) => write!(f, "invalid method configuration: {msg}"),
            LossError::Json(msg) => write!(f, "method configuration JSON: {msg}"),
            LossError::Stat(e) => write!(f, "{e}"),
            LossError::Network(e) => write!(f, "{e}"),
            LossError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LossError {}

impl From<StatError> for LossError {
    fn from(e: StatError) -> Self {
        LossError::Stat(e)
    }
}

impl From<NetworkError> for LossError {
    fn from(e: NetworkError) -> Self {
        LossError::Network(e)
    }
}

impl From<TensorError> for LossError {
    fn from(e: TensorError) -> Self {
        LossError::Tensor(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingKind {
    Uniform,
    Geometric,
}

/// Per-layer style and content weights, keyed by the layer's depth index.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingScheme {
    pub kind: WeightingKind,
    style: BTreeMap<usize, f64>,
    content: BTreeMap<usize, f64>,
}

impl WeightingScheme {
    pub fn style_weight(&self, index: usize) -> f64 {
        match self.kind {
            WeightingKind::Uniform => 1.0,
            WeightingKind::Geometric => *self
                .style
                .get(&index)
                .expect("geometric weights cover every configured layer"),
        }
    }

    pub fn content_weight(&self, index: usize) -> f64 {
        match self.kind {
            WeightingKind::Uniform => 1.0,
            WeightingKind::Geometric => *self
                .content
                .get(&index)
                .expect("geometric weights cover every configured layer"),
        }
    }
}

/// Exact power-of-two layer weights: with the used layers ranked by depth
/// (rank `d` of `D`), the style weight is `2^(D - d)` and the content
/// weight `2^d`.
pub fn geometric_weights(layer_indices: &[usize]) -> Result<WeightingScheme, LossError> {
    let mut sorted = layer_indices.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(LossError::DuplicateIndex(pair[0]));
        }
    }
    for &i in &sorted {
        if i == 0 || i > 16 {
            return Err(LossError::IndexRange(i));
        }
    }
    let depth_count = sorted.len();
    let mut style = BTreeMap::new();
    let mut content = BTreeMap::new();
    for (rank0, &index) in sorted.iter().enumerate() {
        let rank = rank0 + 1;
        style.insert(index, (1u64 << (depth_count - rank)) as f64);
        content.insert(index, (1u64 << rank) as f64);
    }
    Ok(WeightingScheme {
        kind: WeightingKind::Geometric,
        style,
        content,
    })
}

/// All listed weights equal one.
pub fn uniform_weights(layer_indices: &[usize]) -> WeightingScheme {
    let style = layer_indices.iter().map(|&i| (i, 1.0)).collect();
    let content = layer_indices.iter().map(|&i| (i, 1.0)).collect();
    WeightingScheme {
        kind: WeightingKind::Uniform,
        style,
        content,
    }
}

/// One style term: which statistic over which layer or layer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTerm {
    pub variant: StatVariant,
    pub layers: StatLayers,
    #[serde(default)]
    pub blur_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRule {
    pub layer: String,
    pub keep_fraction: f64,
}

/// A full method description: one column of the preset table, or a
/// user-supplied JSON document with the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub content_layers: Vec<String>,
    pub style_terms: Vec<StyleTerm>,
    pub weighting: WeightingKind,
    pub shift: f64,
    pub style_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<Vec<MaskRule>>,
    pub iterations: usize,
}

impl MethodConfig {
    pub fn is_masked(&self) -> bool {
        self.masking.as_ref().is_some_and(|rules| !rules.is_empty())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json_str(json: &str) -> Result<Self, LossError> {
        serde_json::from_str(json).map_err(|e| LossError::Json(e.to_string()))
    }
}

/// Optional overrides applied while building a preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodOverrides {
    pub iterations: Option<usize>,
    pub style_weight: Option<f64>,
    pub shift: Option<f64>,
    /// Replaces the blur count of every inter-layer term.
    pub blur_count: Option<usize>,
    /// Replaces the exponent of every amplified term.
    pub power: Option<f64>,
}

/// Preset names in listing order; the first nine are the method table, the
/// rest are experimental.
pub const METHOD_NAMES: [&str; 13] = [
    "Classic",
    "ClassicShifted",
    "ClassicDense",
    "AllToContent",
    "Chain",
    "ChainUniform",
    "ChainUnshifted",
    "ChainBlurred",
    "ChainExtended",
    "Amplified",
    "ContentAware",
    "GramCube",
    "Masked",
];

pub const TABLE_METHOD_COUNT: usize = 9;

pub fn is_experimental_method(name: &str) -> bool {
    METHOD_NAMES
        .iter()
        .position(|n| *n == name)
        .is_some_and(|i| i >= TABLE_METHOD_COUNT)
}

/// Match a user-supplied name against the preset list, ignoring case and
/// `-`/`_` separators.
pub fn canonical_method_name(input: &str) -> Option<&'static str> {
    let normalized: String = input
        .chars()
        .filter(|c| *c != '-' && *c != '_')
        .flat_map(|c| c.to_lowercase())
        .collect();
    METHOD_NAMES
        .iter()
        .find(|name| name.to_lowercase() == normalized)
        .copied()
}

const CLASSIC_STYLE_LAYERS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];
const CONTENT_LAYER: &str = "conv4_2";

fn all_vgg_layers() -> Vec<String> {
    crate::network::vgg19_layer_specs()
        .into_iter()
        .map(|s| s.name)
        .collect()
}

fn single_terms(variant: StatVariant, layers: &[&str]) -> Vec<StyleTerm> {
    layers
        .iter()
        .map(|l| StyleTerm {
            variant,
            layers: StatLayers::Single(l.to_string()),
            blur_count: 0,
            power: None,
        })
        .collect()
}

/// The 15 consecutive pairs (deeper, shallower), from conv5_4-conv5_3 down
/// to conv1_2-conv1_1.
fn chain_pairs() -> Vec<(String, String)> {
    let layers = all_vgg_layers();
    (1..layers.len())
        .rev()
        .map(|i| (layers[i].clone(), layers[i - 1].clone()))
        .collect()
}

fn pair_terms(
    variant: StatVariant,
    pairs: Vec<(String, String)>,
    blur_count: usize,
) -> Vec<StyleTerm> {
    pairs
        .into_iter()
        .map(|(a, b)| StyleTerm {
            variant,
            layers: StatLayers::Pair(a, b),
            blur_count,
            power: None,
        })
        .collect()
}

/// Construct one of the named presets, then apply overrides.
pub fn build_method_config(
    name: &str,
    overrides: &MethodOverrides,
) -> Result<MethodConfig, LossError> {
    let canonical =
        canonical_method_name(name).ok_or_else(|| LossError::UnknownMethod(name.to_string()))?;
    let all = all_vgg_layers();
    let all_refs: Vec<&str> = all.iter().map(|s| s.as_str()).collect();

    let mut config = match canonical {
        "Classic" => MethodConfig {
            name: canonical.to_string(),
            content_layers: vec![CONTENT_LAYER.to_string()],
            style_terms: single_terms(StatVariant::PlainGram, &CLASSIC_STYLE_LAYERS),
            weighting: WeightingKind::Uniform,
            shift: 0.0,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: None,
            iterations: DEFAULT_ITERATIONS,
        },
        "ClassicShifted" => MethodConfig {
            name: canonical.to_string(),
            content_layers: vec![CONTENT_LAYER.to_string()],
            style_terms: single_terms(StatVariant::ShiftedGram, &CLASSIC_STYLE_LAYERS),
            weighting: WeightingKind::Uniform,
            shift: DEFAULT_SHIFT,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: None,
            iterations: DEFAULT_ITERATIONS,
        },
        "ClassicDense" => MethodConfig {
            name: canonical.to_string(),
            content_layers: all.clone(),
            style_terms: single_terms(StatVariant::ShiftedGram, &all_refs),
            weighting: WeightingKind::Geometric,
            shift: DEFAULT_SHIFT,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: None,
            iterations: DEFAULT_ITERATIONS,
        },
        "AllToContent" => {
            // conv4_2 tied to every layer, enumerated deepest first
            let pairs: Vec<(String, String)> = all
                .iter()
                .rev()
                .map(|l| (CONTENT_LAYER.to_string(), l.clone()))
                .collect();
            MethodConfig {
                name: canonical.to_string(),
                content_layers: all.clone(),
                style_terms: pair_terms(StatVariant::InterLayer, pairs, 0),
                weighting: WeightingKind::Geometric,
                shift: DEFAULT_SHIFT,
                style_weight: DEFAULT_STYLE_WEIGHT,
                masking: None,
                iterations: DEFAULT_ITERATIONS,
            }
        }
        "Chain" | "ChainUniform" | "ChainUnshifted" | "ChainBlurred" => {
            let blur = if canonical == "ChainBlurred" { 1 } else { 0 };
            MethodConfig {
                name: canonical.to_string(),
                content_layers: all.clone(),
                style_terms: pair_terms(StatVariant::InterLayer, chain_pairs(), blur),
                weighting: if canonical == "ChainUniform" {
                    WeightingKind::Uniform
                } else {
                    WeightingKind::Geometric
                },
                shift: if canonical == "ChainUnshifted" {
                    0.0
                } else {
                    DEFAULT_SHIFT
                },
                style_weight: DEFAULT_STYLE_WEIGHT,
                masking: None,
                iterations: DEFAULT_ITERATIONS,
            }
        }
        "ChainExtended" => MethodConfig {
            name: canonical.to_string(),
            content_layers: all.clone(),
            style_terms: pair_terms(StatVariant::AdjacentInterLayer, chain_pairs(), 0),
            weighting: WeightingKind::Geometric,
            shift: DEFAULT_SHIFT,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: None,
            iterations: DEFAULT_ITERATIONS,
        },
        "Amplified" => {
            let mut terms = single_terms(StatVariant::Amplified, &CLASSIC_STYLE_LAYERS);
            for t in &mut terms {
                t.power = Some(DEFAULT_AMPLIFY_POWER);
            }
            MethodConfig {
                name: canonical.to_string(),
                content_layers: vec![CONTENT_LAYER.to_string()],
                style_terms: terms,
                weighting: WeightingKind::Uniform,
                shift: 0.0,
                style_weight: DEFAULT_STYLE_WEIGHT,
                masking: None,
                iterations: DEFAULT_ITERATIONS,
            }
        }
        "ContentAware" => {
            let pairs: Vec<(String, String)> = ["conv1_1", "conv2_1", "conv3_1", "conv4_1"]
                .iter()
                .map(|l| (l.to_string(), CONTENT_LAYER.to_string()))
                .collect();
            MethodConfig {
                name: canonical.to_string(),
                content_layers: vec![CONTENT_LAYER.to_string()],
                style_terms: pair_terms(StatVariant::ContentAware, pairs, 0),
                weighting: WeightingKind::Uniform,
                shift: DEFAULT_SHIFT,
                style_weight: DEFAULT_STYLE_WEIGHT,
                masking: None,
                iterations: DEFAULT_ITERATIONS,
            }
        }
        "GramCube" => MethodConfig {
            name: canonical.to_string(),
            content_layers: vec![CONTENT_LAYER.to_string()],
            style_terms: single_terms(StatVariant::GramCube, &CLASSIC_STYLE_LAYERS),
            weighting: WeightingKind::Uniform,
            shift: 0.0,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: None,
            iterations: DEFAULT_ITERATIONS,
        },
        "Masked" => MethodConfig {
            name: canonical.to_string(),
            content_layers: vec![CONTENT_LAYER.to_string()],
            style_terms: single_terms(StatVariant::PlainGram, &CLASSIC_STYLE_LAYERS),
            weighting: WeightingKind::Uniform,
            shift: 0.0,
            style_weight: DEFAULT_STYLE_WEIGHT,
            masking: Some(
                CLASSIC_STYLE_LAYERS
                    .iter()
                    .zip(DEFAULT_MASK_KEEP)
                    .map(|(layer, keep_fraction)| MaskRule {
                        layer: layer.to_string(),
                        keep_fraction,
                    })
                    .collect(),
            ),
            iterations: DEFAULT_ITERATIONS,
        },
        _ => unreachable!("canonical names are exhaustive"),
    };

    if let Some(iterations) = overrides.iterations {
        config.iterations = iterations;
    }
    if let Some(alpha) = overrides.style_weight {
        config.style_weight = alpha;
    }
    if let Some(shift) = overrides.shift {
        config.shift = shift;
        // the plain/shifted tags track the effective shift
        for term in &mut config.style_terms {
            if term.variant == StatVariant::PlainGram && shift != 0.0 {
                term.variant = StatVariant::ShiftedGram;
            } else if term.variant == StatVariant::ShiftedGram && shift == 0.0 {
                term.variant = StatVariant::PlainGram;
            }
        }
    }
    if let Some(blur) = overrides.blur_count {
        for term in &mut config.style_terms {
            if matches!(
                term.variant,
                StatVariant::InterLayer | StatVariant::AdjacentInterLayer
            ) {
                term.blur_count = blur;
            }
        }
    }
    if let Some(power) = overrides.power {
        for term in &mut config.style_terms {
            if term.variant == StatVariant::Amplified {
                term.power = Some(power);
            }
        }
    }
    Ok(config)
}

/// Target statistics computed from the style image, keyed by term order.
#[derive(Debug, Clone)]
pub struct StyleRepresentation {
    pub statistics: Vec<GramStatistic>,
}

/// Layer indices referenced by the configuration (content and style, union).
fn used_layer_indices(net: &Network, config: &MethodConfig) -> Result<Vec<usize>, LossError> {
    let mut indices = Vec::new();
    let mut push = |name: &str| -> Result<(), LossError> {
        let pos = net
            .layer_position(name)
            .ok_or_else(|| LossError::UnknownLayer(name.to_string()))?;
        let index = net.specs[pos].index;
        if !indices.contains(&index) {
            indices.push(index);
        }
        Ok(())
    };
    for layer in &config.content_layers {
        push(layer)?;
    }
    for term in &config.style_terms {
        match &term.layers {
            StatLayers::Single(l) => push(l)?,
            StatLayers::Pair(a, b) => {
                push(a)?;
                push(b)?;
            }
        }
    }
    Ok(indices)
}

/// Per-layer weights for this configuration on this network.
pub fn layer_weighting(net: &Network, config: &MethodConfig) -> Result<WeightingScheme, LossError> {
    let indices = used_layer_indices(net, config)?;
    match config.weighting {
        WeightingKind::Uniform => Ok(uniform_weights(&indices)),
        WeightingKind::Geometric => geometric_weights(&indices),
    }
}

/// How the second input of a pair statistic was aligned onto the first
/// input's grid, so its gradient can be pulled back exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Alignment {
    Identity,
    /// Nearest upsampled by (fx, fy); adjoint is the block sum.
    Upsampled {
        fx: usize,
        fy: usize,
    },
    /// Block mean by (fx, fy); adjoint is upsampling scaled by 1/(fx fy).
    MeanDownsampled {
        fx: usize,
        fy: usize,
    },
}

fn align_to_grid(
    volume: &ActivationVolume,
    width: usize,
    height: usize,
) -> Result<(ActivationVolume, Alignment), LossError> {
    if volume.width() == width && volume.height() == height {
        return Ok((volume.clone(), Alignment::Identity));
    }
    if width.is_multiple_of(volume.width()) && height.is_multiple_of(volume.height()) {
        let fx = width / volume.width();
        let fy = height / volume.height();
        return Ok((
            nearest_upsample(volume, fx, fy)?,
            Alignment::Upsampled { fx, fy },
        ));
    }
    if volume.width().is_multiple_of(width) && volume.height().is_multiple_of(height) {
        let fx = volume.width() / width;
        let fy = volume.height() / height;
        let mut mean = block_sum_downsample(volume, fx, fy)?;
        mean.scale(1.0 / (fx * fy) as f64);
        return Ok((mean, Alignment::MeanDownsampled { fx, fy }));
    }
    Err(LossError::Stat(StatError::SpatialMismatch {
        large: (width, height),
        small: (volume.width(), volume.height()),
    }))
}

fn alignment_adjoint(
    grad: &ActivationVolume,
    alignment: Alignment,
) -> Result<ActivationVolume, LossError> {
    Ok(match alignment {
        Alignment::Identity => grad.clone(),
        Alignment::Upsampled { fx, fy } => block_sum_downsample(grad, fx, fy)?,
        Alignment::MeanDownsampled { fx, fy } => {
            let mut up = nearest_upsample(grad, fx, fy)?;
            up.scale(1.0 / (fx * fy) as f64);
            up
        }
    })
}

/// A style term resolved against a concrete activation set: canonical
/// input orientation, statistic parameters, owning layers and constants.
struct ResolvedTerm {
    params: StatParams,
    /// Network position of the first statistic input.
    layer_a: usize,
    /// Network position of the second input, if the variant takes a pair.
    layer_b: Option<usize>,
    /// Alignment applied to the second input before evaluation.
    alignment: Alignment,
    /// Owned aligned copy of the second input (`ContentAware` only).
    aligned_b: Option<ActivationVolume>,
    /// Style weight of the term (the shallower layer owns a pair).
    weight: f64,
    /// Normalization constant `4 M^2 * prod(channel counts)`.
    normalizer: f64,
    tag: StatLayers,
}

impl ResolvedTerm {
    fn inputs<'a>(&'a self, acts: &'a ActivationSet) -> StatInputs<'a> {
        match (self.layer_b, &self.aligned_b) {
            (_, Some(aligned)) => StatInputs::Pair(acts.volume(self.layer_a), aligned),
            (Some(b), None) => StatInputs::Pair(acts.volume(self.layer_a), acts.volume(b)),
            (None, None) => StatInputs::Single(acts.volume(self.layer_a)),
        }
    }
}

fn resolve_term(
    net: &Network,
    config: &MethodConfig,
    weighting: &WeightingScheme,
    term: &StyleTerm,
    acts: &ActivationSet,
) -> Result<ResolvedTerm, LossError> {
    let position = |name: &str| -> Result<usize, LossError> {
        net.layer_position(name)
            .ok_or_else(|| LossError::UnknownLayer(name.to_string()))
    };
    let params = StatParams {
        variant: term.variant,
        shift: config.shift,
        power: term.power.unwrap_or(DEFAULT_AMPLIFY_POWER),
        blur_count: term.blur_count,
    };
    match (&term.layers, term.variant.takes_pair()) {
        (StatLayers::Single(name), false) => {
            let pos = position(name)?;
            let volume = acts.volume(pos);
            let index = net.specs[pos].index;
            let m = volume.positions() as f64;
            let k = volume.channels() as f64;
            let channel_product = match term.variant {
                StatVariant::GramCube => k * k * k,
                _ => k * k,
            };
            Ok(ResolvedTerm {
                params,
                layer_a: pos,
                layer_b: None,
                alignment: Alignment::Identity,
                aligned_b: None,
                weight: weighting.style_weight(index),
                normalizer: 4.0 * m * m * channel_product,
                tag: term.layers.clone(),
            })
        }
        (StatLayers::Pair(first, second), true) => {
            let pos_a = position(first)?;
            let pos_b = position(second)?;
            if term.variant == StatVariant::ContentAware {
                // the style layer owns the grid; the weighting volume is
                // aligned onto it
                let fl = acts.volume(pos_a);
                let (aligned, alignment) =
                    align_to_grid(acts.volume(pos_b), fl.width(), fl.height())?;
                let m = fl.positions() as f64;
                let kl = fl.channels() as f64;
                let kc = aligned.channels() as f64;
                let index = net.specs[pos_a].index.min(net.specs[pos_b].index);
                Ok(ResolvedTerm {
                    params,
                    layer_a: pos_a,
                    layer_b: Some(pos_b),
                    alignment,
                    aligned_b: Some(aligned),
                    weight: weighting.style_weight(index),
                    normalizer: 4.0 * m * m * kc * kl * kl,
                    tag: term.layers.clone(),
                })
            } else {
                // canonical orientation: the larger grid goes first and the
                // statistic upsamples the second input internally
                let (pos_a, pos_b) =
                    if acts.volume(pos_b).positions() > acts.volume(pos_a).positions() {
                        (pos_b, pos_a)
                    } else {
                        (pos_a, pos_b)
                    };
                let fl = acts.volume(pos_a);
                let fk = acts.volume(pos_b);
                let m = fl.positions() as f64;
                let channel_product = (fl.channels() * fk.channels()) as f64;
                let index = net.specs[pos_a].index.min(net.specs[pos_b].index);
                Ok(ResolvedTerm {
                    params,
                    layer_a: pos_a,
                    layer_b: Some(pos_b),
                    alignment: Alignment::Identity,
                    aligned_b: None,
                    weight: weighting.style_weight(index),
                    normalizer: 4.0 * m * m * channel_product,
                    tag: term.layers.clone(),
                })
            }
        }
        (layers, _) => Err(LossError::BadConfig(format!(
            "term {:?} has wrong layer arity for {}",
            layers, term.variant
        ))),
    }
}

/// Evaluate every configured statistic on the style image.
pub fn style_target(
    net: &Network,
    config: &MethodConfig,
    style_image: &ActivationVolume,
) -> Result<StyleRepresentation, LossError> {
    let acts = net.forward_record(style_image)?;
    let weighting = layer_weighting(net, config)?;
    let mut statistics = Vec::with_capacity(config.style_terms.len());
    for term in &config.style_terms {
        let resolved = resolve_term(net, config, &weighting, term, &acts)?;
        let mut stat =
            statistic_value(resolved.inputs(&acts), &resolved.params)?.with_layers(resolved.tag);
        stat.blur_count = resolved.params.blur_count;
        statistics.push(stat);
    }
    Ok(StyleRepresentation { statistics })
}

/// Binary keep-mask over a content activation volume: exactly
/// `round(keep_fraction * len)` entries are one, chosen as the largest
/// values with ties broken by scan order.
pub fn gradient_mask(
    source: &ActivationVolume,
    keep_fraction: f64,
) -> Result<ActivationVolume, LossError> {
    if source.data().is_empty() {
        return Err(LossError::EmptyVolume);
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(LossError::BadKeepFraction(keep_fraction));
    }
    let total = source.data().len();
    let keep = (keep_fraction * total as f64).round() as usize;
    let mut mask = ActivationVolume::zeros(source.channels(), source.width(), source.height());
    if keep == 0 {
        return Ok(mask);
    }
    if keep >= total {
        mask.data_mut().fill(1.0);
        return Ok(mask);
    }
    let data = source.data();
    let mut order: Vec<usize> = (0..total).collect();
    let descending_then_stable = |a: &usize, b: &usize| {
        data[*b]
            .partial_cmp(&data[*a])
            .expect("volume entries are finite")
            .then(a.cmp(b))
    };
    order.select_nth_unstable_by(keep - 1, descending_then_stable);
    for &i in &order[..keep] {
        mask.data_mut()[i] = 1.0;
    }
    Ok(mask)
}

/// Total loss split into its style and content components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub style: f64,
    pub content: f64,
}

/// Evaluate the full objective at `image` and return the loss together
/// with its gradient with respect to the image pixels.
///
/// Style gradients are assembled per layer from each term's VJP, masked if
/// the configuration says so, merged with the content gradients, and
/// back-propagated through the network in one pass. Term order is fixed,
/// so the result does not depend on internal parallelism.
pub fn total_loss_grad(
    net: &Network,
    config: &MethodConfig,
    image: &ActivationVolume,
    target_style: &StyleRepresentation,
    target_content: &ActivationSet,
) -> Result<(LossBreakdown, ActivationVolume), LossError> {
    if target_style.statistics.len() != config.style_terms.len() {
        return Err(LossError::KeyMismatch {
            term: target_style.statistics.len().min(config.style_terms.len()),
            detail: format!(
                "configuration has {} style terms, representation has {}",
                config.style_terms.len(),
                target_style.statistics.len()
            ),
        });
    }
    let acts = net.forward_record(image)?;
    let weighting = layer_weighting(net, config)?;
    let alpha = config.style_weight;

    let mut style_grads: Vec<Option<ActivationVolume>> = vec![None; acts.len()];
    let mut style_sum = 0.0f64;

    for (term_index, (term, target)) in config
        .style_terms
        .iter()
        .zip(&target_style.statistics)
        .enumerate()
    {
        let resolved = resolve_term(net, config, &weighting, term, &acts)?;
        let value = statistic_value(resolved.inputs(&acts), &resolved.params)?;
        if value.variant != target.variant || value.shape != target.shape {
            return Err(LossError::KeyMismatch {
                term: term_index,
                detail: format!(
                    "evaluated {} {:?}, target {} {:?}",
                    value.variant, value.shape, target.variant, target.shape
                ),
            });
        }
        if target.layers.as_ref() != Some(&resolved.tag) {
            return Err(LossError::KeyMismatch {
                term: term_index,
                detail: format!(
                    "term layers {:?}, target tagged {:?}",
                    resolved.tag, target.layers
                ),
            });
        }

        let diff: Vec<f64> = value
            .value
            .iter()
            .zip(&target.value)
            .map(|(v, t)| v - t)
            .collect();
        let raw: f64 = diff.iter().map(|d| d * d).sum();
        style_sum += resolved.weight * raw / resolved.normalizer;

        // d(style loss)/d(value) feeding the term's VJP
        let upstream_scale = 2.0 * alpha * resolved.weight / resolved.normalizer;
        let upstream: Vec<f64> = diff.iter().map(|d| upstream_scale * d).collect();
        let grads = statistic_vjp(resolved.inputs(&acts), &resolved.params, &upstream)?;

        let mut add_grad =
            |position: usize, grad: ActivationVolume| match &mut style_grads[position] {
                Some(existing) => existing.accumulate(&grad),
                slot @ None => *slot = Some(grad),
            };
        match (resolved.layer_b, grads.len()) {
            (None, 1) => {
                let [grad_a] = <[ActivationVolume; 1]>::try_from(grads).expect("one gradient");
                add_grad(resolved.layer_a, grad_a);
            }
            (Some(pos_b), 2) => {
                let [grad_a, grad_b] =
                    <[ActivationVolume; 2]>::try_from(grads).expect("two gradients");
                add_grad(resolved.layer_a, grad_a);
                add_grad(pos_b, alignment_adjoint(&grad_b, resolved.alignment)?);
            }
            _ => unreachable!("vjp arity follows the variant"),
        }
    }

    // masking multiplies the accumulated style gradient of a layer
    if let Some(rules) = &config.masking {
        for rule in rules {
            let pos = net
                .layer_position(&rule.layer)
                .ok_or_else(|| LossError::UnknownLayer(rule.layer.clone()))?;
            let source = target_content
                .get(&rule.layer)
                .ok_or_else(|| LossError::UnknownLayer(rule.layer.clone()))?;
            let mask = gradient_mask(source, rule.keep_fraction)?;
            if let Some(grad) = &mut style_grads[pos] {
                for (g, m) in grad.data_mut().iter_mut().zip(mask.data()) {
                    *g *= m;
                }
            }
        }
    }

    // content terms
    let mut content_sum = 0.0f64;
    let mut content_grads: Vec<Option<ActivationVolume>> = vec![None; acts.len()];
    for layer in &config.content_layers {
        let pos = net
            .layer_position(layer)
            .ok_or_else(|| LossError::UnknownLayer(layer.clone()))?;
        let current = acts.volume(pos);
        let target = target_content
            .get(layer)
            .ok_or_else(|| LossError::UnknownLayer(layer.clone()))?;
        if !current.same_shape(target) {
            return Err(LossError::KeyMismatch {
                term: pos,
                detail: format!("content layer {layer} shape differs from target"),
            });
        }
        let weight = weighting.content_weight(net.specs[pos].index);
        let m = current.data().len() as f64;
        let mut grad =
            ActivationVolume::zeros(current.channels(), current.width(), current.height());
        let mut raw = 0.0f64;
        let scale = 2.0 * weight / m;
        for ((g, a), t) in grad
            .data_mut()
            .iter_mut()
            .zip(current.data())
            .zip(target.data())
        {
            let d = a - t;
            raw += d * d;
            *g = scale * d;
        }
        content_sum += weight * raw / m;
        match &mut content_grads[pos] {
            Some(existing) => existing.accumulate(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    // merge and inject
    let mut injected: BTreeMap<String, ActivationVolume> = BTreeMap::new();
    for pos in 0..acts.len() {
        let merged = match (style_grads[pos].take(), content_grads[pos].take()) {
            (Some(mut s), Some(c)) => {
                s.accumulate(&c);
                Some(s)
            }
            (Some(s), None) => Some(s),
            (None, Some(c)) => Some(c),
            (None, None) => None,
        };
        if let Some(grad) = merged {
            injected.insert(acts.name(pos).to_string(), grad);
        }
    }
    let pixel_grad = if injected.is_empty() {
        ActivationVolume::zeros(image.channels(), image.width(), image.height())
    } else {
        net.backward_inject(&acts, &injected)?
    };

    let style = alpha * style_sum;
    let breakdown = LossBreakdown {
        total: style + content_sum,
        style,
        content: content_sum,
    };
    Ok((breakdown, pixel_grad))
}
