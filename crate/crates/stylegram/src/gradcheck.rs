//! Finite-difference oracle and toy fixtures.
//!
//! Everything the acceptance suite needs to validate the analytic
//! gradients independently: central differences, seeded toy networks with
//! the same layer API as the full trunk, desk-scale method configurations
//! for every preset family, and a per-variant gradient check with a
//! machine-readable report.

use std::fmt;

use serde::Serialize;

use crate::loss::{style_target, total_loss_grad, MethodConfig, StyleTerm, WeightingKind};
use crate::network::Network;
use crate::rng::SplitMix64;
use crate::statistics::{
    statistic_shape, statistic_value, statistic_vjp, StatInputs, StatLayers, StatParams,
    StatVariant,
};
use crate::tensor::ActivationVolume;

/// Tolerance the gradient suite must meet, at `eps = 1e-5` in double
/// precision.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const GRADCHECK_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum GradcheckError {
    /// The probed function returned a non-finite value while perturbing the
    /// named coordinate.
    NonFinite { coordinate: usize },
}

impl fmt::Display for GradcheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradcheckError::NonFinite { coordinate } => {
                write!(
                    f,
                    "non-finite function value while perturbing coordinate {coordinate}"
                )
            }
        }
    }
}

impl std::error::Error for GradcheckError {}

/// Central-difference gradient estimate, coordinate by coordinate.
pub fn finite_difference_grad<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, GradcheckError>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0);
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradcheckError::NonFinite { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative disagreement between two gradient vectors: the largest
/// coordinate difference over the largest coordinate magnitude.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    diff / scale
}

/// Seeded volume with entries uniform in `[lo, hi)`.
pub fn random_volume(
    seed: u64,
    channels: usize,
    width: usize,
    height: usize,
    lo: f64,
    hi: f64,
) -> ActivationVolume {
    let mut rng = SplitMix64::new(seed);
    let data = (0..channels * width * height)
        .map(|_| rng.next_range(lo, hi))
        .collect();
    ActivationVolume::new(channels, width, height, data).expect("finite range")
}

/// Seeded flat buffer with entries uniform in `[lo, hi)`.
pub fn random_values(seed: u64, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..count).map(|_| rng.next_range(lo, hi)).collect()
}

/// Desk-scale network with the same layer API as the full trunk: three
/// conv layers of at most four channels, pooling after the second, all
/// weights deterministic in the seed and inside [-1, 1].
pub struct ToyNetwork;

impl ToyNetwork {
    pub fn build(seed: u64) -> Network {
        Network::toy(seed, 3, &[4, 3, 4], &[false, true, false])
    }

    /// Seeded RGB-like input volume for the toy trunk.
    pub fn input(seed: u64, side: usize) -> ActivationVolume {
        random_volume(seed, 3, side, side, 0.0, 1.0)
    }
}

/// A VGG-19-shaped fixture: the full 16-layer table with its names,
/// indices and pooling schedule, but channel counts divided by `divisor`
/// (floored at 4) and random weights. Lets the named presets run at desk
/// scale.
pub fn scaled_vgg_network(seed: u64, divisor: usize) -> Network {
    assert!(divisor >= 1);
    let mut specs = crate::network::vgg19_layer_specs();
    let mut in_channels = 3;
    for spec in &mut specs {
        spec.in_channels = in_channels;
        spec.out_channels = (spec.out_channels / divisor).max(4);
        in_channels = spec.out_channels;
    }
    let plan: Vec<usize> = specs.iter().map(|s| s.out_channels).collect();
    let pools: Vec<bool> = specs.iter().map(|s| s.pool_after).collect();
    let mut net = Network::toy(seed, 3, &plan, &pools);
    // keep the real layer names and depth indices
    for (toy_spec, vgg_spec) in net.specs.iter_mut().zip(specs) {
        toy_spec.name = vgg_spec.name;
        toy_spec.index = vgg_spec.index;
    }
    net
}

/// The preset families exercised by the end-to-end gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetFamily {
    Classic,
    Dense,
    Chain,
    ChainBlurred,
    ChainExtended,
    Amplified,
    ContentAware,
    GramCube,
}

impl PresetFamily {
    pub fn all() -> [PresetFamily; 8] {
        [
            PresetFamily::Classic,
            PresetFamily::Dense,
            PresetFamily::Chain,
            PresetFamily::ChainBlurred,
            PresetFamily::ChainExtended,
            PresetFamily::Amplified,
            PresetFamily::ContentAware,
            PresetFamily::GramCube,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            PresetFamily::Classic => "Classic",
            PresetFamily::Dense => "Dense",
            PresetFamily::Chain => "Chain",
            PresetFamily::ChainBlurred => "ChainBlurred",
            PresetFamily::ChainExtended => "ChainExtended",
            PresetFamily::Amplified => "Amplified",
            PresetFamily::ContentAware => "ContentAware",
            PresetFamily::GramCube => "GramCube",
        }
    }
}

/// The toy analog of a preset family over the three toy layers.
pub fn toy_method_config(family: PresetFamily) -> MethodConfig {
    let all = ["conv1", "conv2", "conv3"];
    let single = |variant: StatVariant, layers: &[&str], power: Option<f64>| -> Vec<StyleTerm> {
        layers
            .iter()
            .map(|l| StyleTerm {
                variant,
                layers: StatLayers::Single(l.to_string()),
                blur_count: 0,
                power,
            })
            .collect()
    };
    let pairs = |variant: StatVariant, blur: usize| -> Vec<StyleTerm> {
        vec![
            StyleTerm {
                variant,
                layers: StatLayers::Pair("conv3".into(), "conv2".into()),
                blur_count: blur,
                power: None,
            },
            StyleTerm {
                variant,
                layers: StatLayers::Pair("conv2".into(), "conv1".into()),
                blur_count: blur,
                power: None,
            },
        ]
    };
    let (content, terms, weighting, shift) = match family {
        PresetFamily::Classic => (
            vec!["conv2"],
            single(StatVariant::PlainGram, &all, None),
            WeightingKind::Uniform,
            0.0,
        ),
        PresetFamily::Dense => (
            vec!["conv1", "conv2", "conv3"],
            single(StatVariant::ShiftedGram, &all, None),
            WeightingKind::Geometric,
            -1.0,
        ),
        PresetFamily::Chain => (
            vec!["conv1", "conv2", "conv3"],
            pairs(StatVariant::InterLayer, 0),
            WeightingKind::Geometric,
            -1.0,
        ),
        PresetFamily::ChainBlurred => (
            vec!["conv1", "conv2", "conv3"],
            pairs(StatVariant::InterLayer, 1),
            WeightingKind::Geometric,
            -1.0,
        ),
        PresetFamily::ChainExtended => (
            vec!["conv1", "conv2", "conv3"],
            pairs(StatVariant::AdjacentInterLayer, 0),
            WeightingKind::Geometric,
            -1.0,
        ),
        PresetFamily::Amplified => (
            vec!["conv2"],
            single(StatVariant::Amplified, &all, Some(1.5)),
            WeightingKind::Uniform,
            0.0,
        ),
        PresetFamily::ContentAware => (
            vec!["conv3"],
            vec![
                StyleTerm {
                    variant: StatVariant::ContentAware,
                    layers: StatLayers::Pair("conv1".into(), "conv3".into()),
                    blur_count: 0,
                    power: None,
                },
                StyleTerm {
                    variant: StatVariant::ContentAware,
                    layers: StatLayers::Pair("conv2".into(), "conv3".into()),
                    blur_count: 0,
                    power: None,
                },
            ],
            WeightingKind::Uniform,
            -1.0,
        ),
        PresetFamily::GramCube => (
            vec!["conv2"],
            single(StatVariant::GramCube, &all, None),
            WeightingKind::Uniform,
            0.0,
        ),
    };
    MethodConfig {
        name: format!("Toy{}", family.name()),
        content_layers: content.into_iter().map(str::to_string).collect(),
        style_terms: terms,
        weighting,
        shift,
        style_weight: 5.0,
        masking: None,
        iterations: 10,
    }
}

/// End-to-end check: the analytic pixel gradient of the full objective
/// against central differences, returning the relative error.
pub fn total_loss_fd_error(
    net: &Network,
    config: &MethodConfig,
    content_image: &ActivationVolume,
    style_image: &ActivationVolume,
    eps: f64,
) -> Result<f64, GradcheckError> {
    let target_style = style_target(net, config, style_image).expect("style target evaluates");
    let target_content = net
        .forward_record(content_image)
        .expect("content forward runs");
    let (_, analytic) = total_loss_grad(net, config, content_image, &target_style, &target_content)
        .expect("objective evaluates");
    let objective = |x: &[f64]| -> f64 {
        let image = ActivationVolume::new(
            content_image.channels(),
            content_image.width(),
            content_image.height(),
            x.to_vec(),
        )
        .expect("probe stays finite");
        total_loss_grad(net, config, &image, &target_style, &target_content)
            .expect("objective evaluates")
            .0
            .total
    };
    let fd = finite_difference_grad(objective, content_image.data(), eps)?;
    Ok(relative_error(analytic.data(), &fd))
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantCheck {
    pub variant: String,
    pub max_relative_error: f64,
    pub pass: bool,
}

/// Result of [`check_all_statistics`]: one line per variant plus the
/// overall verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub checks: Vec<VariantCheck>,
    pub passed: bool,
}

impl CheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check, seed {} (eps {:.0e}, tolerance {:.0e})",
            self.seed, self.eps, self.tolerance
        )?;
        for check in &self.checks {
            writeln!(
                f,
                "  {:<20} max rel err {:>12.3e}  {}",
                check.variant,
                check.max_relative_error,
                if check.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "overall: {}", if self.passed { "pass" } else { "FAIL" })
    }
}

/// Fixture volumes and parameters for one statistic variant.
fn variant_fixture(variant: StatVariant, seed: u64) -> (Vec<ActivationVolume>, StatParams) {
    let mut rng = SplitMix64::new(seed);
    let mut sub = || rng.next_u64();
    match variant {
        StatVariant::PlainGram => (
            vec![random_volume(sub(), 3, 4, 4, 0.25, 2.0)],
            StatParams {
                variant,
                shift: 0.0,
                power: 1.0,
                blur_count: 0,
            },
        ),
        StatVariant::ShiftedGram => (
            vec![random_volume(sub(), 3, 4, 4, 0.25, 2.0)],
            StatParams {
                variant,
                shift: -1.0,
                power: 1.0,
                blur_count: 0,
            },
        ),
        StatVariant::InterLayer => (
            vec![
                random_volume(sub(), 2, 4, 4, 0.25, 2.0),
                random_volume(sub(), 3, 2, 2, 0.25, 2.0),
            ],
            StatParams {
                variant,
                shift: -1.0,
                power: 1.0,
                blur_count: 1,
            },
        ),
        StatVariant::AdjacentInterLayer => (
            vec![
                random_volume(sub(), 2, 4, 4, 0.25, 2.0),
                random_volume(sub(), 2, 2, 2, 0.25, 2.0),
            ],
            StatParams {
                variant,
                shift: -1.0,
                power: 1.0,
                blur_count: 0,
            },
        ),
        StatVariant::Amplified => (
            vec![random_volume(sub(), 3, 3, 3, 0.25, 2.0)],
            StatParams {
                variant,
                shift: 0.0,
                power: 1.5,
                blur_count: 0,
            },
        ),
        StatVariant::ContentAware => (
            vec![
                random_volume(sub(), 2, 3, 3, 0.25, 2.0),
                random_volume(sub(), 2, 3, 3, 0.0, 1.5),
            ],
            StatParams {
                variant,
                shift: -1.0,
                power: 1.0,
                blur_count: 0,
            },
        ),
        StatVariant::GramCube => (
            vec![random_volume(sub(), 3, 3, 3, 0.25, 2.0)],
            StatParams {
                variant,
                shift: 0.0,
                power: 1.0,
                blur_count: 0,
            },
        ),
    }
}

fn as_inputs(volumes: &[ActivationVolume]) -> StatInputs<'_> {
    match volumes.len() {
        1 => StatInputs::Single(&volumes[0]),
        2 => StatInputs::Pair(&volumes[0], &volumes[1]),
        n => panic!("{n} input volumes"),
    }
}

/// Check one variant's VJP against central differences; `vjp` is swappable
/// so the detector itself can be tested against a corrupted gradient.
pub(crate) fn variant_max_error_with<V>(
    variant: StatVariant,
    seed: u64,
    vjp: V,
) -> Result<f64, GradcheckError>
where
    V: Fn(StatInputs, &StatParams, &[f64]) -> Vec<ActivationVolume>,
{
    let (volumes, params) = variant_fixture(variant, seed);
    let shape = statistic_shape(as_inputs(&volumes), &params).expect("fixture shapes agree");
    let upstream = {
        let mut rng = SplitMix64::new(seed ^ 0xd1f3_5a7b_9c0e_2d4f);
        (0..shape.iter().product::<usize>())
            .map(|_| rng.next_signed_unit())
            .collect::<Vec<f64>>()
    };

    let analytic_volumes = vjp(as_inputs(&volumes), &params, &upstream);
    let mut analytic = Vec::new();
    for g in &analytic_volumes {
        analytic.extend_from_slice(g.data());
    }

    // flatten all inputs into one coordinate vector for the oracle
    let splits: Vec<usize> = volumes.iter().map(|v| v.data().len()).collect();
    let mut flat = Vec::new();
    for v in &volumes {
        flat.extend_from_slice(v.data());
    }
    let objective = |x: &[f64]| -> f64 {
        let mut rebuilt = Vec::with_capacity(volumes.len());
        let mut offset = 0;
        for (v, len) in volumes.iter().zip(&splits) {
            rebuilt.push(
                ActivationVolume::new(
                    v.channels(),
                    v.width(),
                    v.height(),
                    x[offset..offset + len].to_vec(),
                )
                .expect("probe stays finite"),
            );
            offset += len;
        }
        let value = statistic_value(as_inputs(&rebuilt), &params).expect("fixture evaluates");
        value.value.iter().zip(&upstream).map(|(v, u)| v * u).sum()
    };
    let fd = finite_difference_grad(objective, &flat, GRADCHECK_EPS)?;
    Ok(relative_error(&analytic, &fd))
}

/// Run the finite-difference check for every statistic variant.
pub fn check_all_statistics(seed: u64) -> CheckReport {
    let mut checks = Vec::new();
    for variant in StatVariant::all() {
        let err = variant_max_error_with(variant, seed, |inputs, params, upstream| {
            statistic_vjp(inputs, params, upstream).expect("fixture shapes agree")
        })
        .expect("statistics are finite on fixtures");
        checks.push(VariantCheck {
            variant: variant.to_string(),
            max_relative_error: err,
            pass: err < GRADCHECK_TOLERANCE,
        });
    }
    let passed = checks.iter().all(|c| c.pass);
    CheckReport {
        seed,
        eps: GRADCHECK_EPS,
        tolerance: GRADCHECK_TOLERANCE,
        checks,
        passed,
    }
}
