//! Style statistics over activation volumes.
//!
//! Every variant is a forward evaluation plus an exact vector-Jacobian
//! product with respect to its input volumes, so a loss assembled from
//! these terms back-propagates analytically. Values are raw unnormalized
//! sums; normalization constants belong to the loss layer so all variants
//! share one convention.
//!
//! With `F` the `K x M` linearized activation matrix (`M` spatial
//! positions) the implemented statistics are:
//!
//! * plain / shifted Gram: `(F + s)(F + s)^T`
//! * inter-layer Gram: `F_l [blur^n(up(F_k))]^T`
//! * adjacent-offset block: the 3x3 grid of `F_l shift(up(F_k), dx, dy)^T`
//! * amplified Gram: `F^p (F^p)^T` elementwise power, `F >= 0`
//! * content-aware slices: `V[k,i,j] = sum_pos F_i F_j C_k`
//! * Gram cube: `V[k,i,j] = sum_pos F_i F_j F_k`

use std::fmt;

use crate::parallel;
use crate::tensor::{
    block_sum_downsample, box_blur_n, matmul, matmul_bt, nearest_upsample, spatial_shift,
    ActivationVolume, Matrix, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StatVariant {
    PlainGram,
    ShiftedGram,
    InterLayer,
    AdjacentInterLayer,
    Amplified,
    ContentAware,
    GramCube,
}

impl StatVariant {
    pub fn all() -> [StatVariant; 7] {
        [
            StatVariant::PlainGram,
            StatVariant::ShiftedGram,
            StatVariant::InterLayer,
            StatVariant::AdjacentInterLayer,
            StatVariant::Amplified,
            StatVariant::ContentAware,
            StatVariant::GramCube,
        ]
    }

    pub fn takes_pair(self) -> bool {
        matches!(
            self,
            StatVariant::InterLayer | StatVariant::AdjacentInterLayer | StatVariant::ContentAware
        )
    }
}

impl fmt::Display for StatVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StatVariant::PlainGram => "PlainGram",
            StatVariant::ShiftedGram => "ShiftedGram",
            StatVariant::InterLayer => "InterLayer",
            StatVariant::AdjacentInterLayer => "AdjacentInterLayer",
            StatVariant::Amplified => "Amplified",
            StatVariant::ContentAware => "ContentAware",
            StatVariant::GramCube => "GramCube",
        };
        write!(f, "{name}")
    }
}

/// Which layer(s) a statistic was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum StatLayers {
    Single(String),
    Pair(String, String),
}

impl fmt::Display for StatLayers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatLayers::Single(l) => write!(f, "{l}"),
            StatLayers::Pair(l, k) => write!(f, "{l}-{k}"),
        }
    }
}

/// A tagged statistic value with a variant-determined shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStatistic {
    pub variant: StatVariant,
    pub layers: Option<StatLayers>,
    pub blur_count: usize,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl GramStatistic {
    fn new(variant: StatVariant, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            variant,
            layers: None,
            blur_count: 0,
            shape,
            value,
        }
    }

    pub fn with_layers(mut self, layers: StatLayers) -> Self {
        self.layers = Some(layers);
        self
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatError {
    /// Paired volumes whose grids cannot be aligned by integer upsampling.
    SpatialMismatch {
        large: (usize, usize),
        small: (usize, usize),
    },
    /// Upstream sensitivity buffer does not match the statistic's shape.
    UpstreamShape {
        expected: usize,
        got: usize,
    },
    /// Amplification exponent below 1.
    PowerRange {
        power: f64,
    },
    /// Negative activation raised to a non-integer power.
    NegativeBase,
    /// Pair variant handed one volume or vice versa.
    ArityMismatch {
        variant: StatVariant,
    },
    Tensor(TensorError),
}

impl fmt::Display for StatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatError::SpatialMismatch { large, small } => write!(
                f,
                "spatial grids {}x{} and {}x{} have no integer alignment",
                large.0, large.1, small.0, small.1
            ),
            StatError::UpstreamShape { expected, got } => {
                write!(f, "upstream length {got}, statistic has {expected} entries")
            }
            StatError::PowerRange { power } => {
                write!(f, "amplification exponent must be >= 1, got {power}")
            }
            StatError::NegativeBase => {
                write!(f, "negative activation under a non-integer exponent")
            }
            StatError::ArityMismatch { variant } => {
                write!(f, "wrong number of input volumes for {variant}")
            }
            StatError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for StatError {}

impl From<TensorError> for StatError {
    fn from(e: TensorError) -> Self {
        StatError::Tensor(e)
    }
}

/// Shifted Gram matrix `(F + s)(F + s)^T`; `s = 0` is the plain Gram.
/// The result is exactly symmetric.
pub fn shifted_gram(f: &ActivationVolume, s: f64) -> GramStatistic {
    let a = f.shifted(s).as_matrix();
    let gram = matmul_bt(&a, &a).expect("matching inner dims");
    let k = f.channels();
    let mut stat = GramStatistic::new(StatVariant::ShiftedGram, vec![k, k], gram.into_data());
    if s == 0.0 {
        stat.variant = StatVariant::PlainGram;
    }
    stat
}

fn shifted_gram_vjp(f: &ActivationVolume, s: f64, upstream: &Matrix) -> ActivationVolume {
    let shifted = f.shifted(s);
    let sym = add_transpose(upstream);
    let grad = matmul(&sym, &shifted.as_matrix()).expect("matching inner dims");
    ActivationVolume::new(f.channels(), f.width(), f.height(), grad.into_data())
        .expect("gradient inherits input shape")
}

/// Amplified Gram `F^p (F^p)^T` with elementwise exponentiation.
pub fn amplified_gram(f: &ActivationVolume, p: f64) -> Result<GramStatistic, StatError> {
    let powered = elementwise_power(f, p)?;
    let mut stat = shifted_gram(&powered, 0.0);
    stat.variant = StatVariant::Amplified;
    Ok(stat)
}

fn amplified_gram_vjp(
    f: &ActivationVolume,
    p: f64,
    upstream: &Matrix,
) -> Result<ActivationVolume, StatError> {
    let powered = elementwise_power(f, p)?;
    // chain through the elementwise power: d(F^p)/dF = p F^(p-1)
    let scale = elementwise_power(f, p - 1.0)?;
    let sym = add_transpose(upstream);
    let grad = matmul(&sym, &powered.as_matrix()).expect("matching inner dims");
    let mut data = grad.into_data();
    for (g, c) in data.iter_mut().zip(scale.data()) {
        *g *= p * c;
    }
    Ok(
        ActivationVolume::new(f.channels(), f.width(), f.height(), data)
            .expect("gradient inherits input shape"),
    )
}

fn elementwise_power(f: &ActivationVolume, p: f64) -> Result<ActivationVolume, StatError> {
    if p == 1.0 {
        return Ok(f.clone());
    }
    if p == 0.0 {
        return Ok(ActivationVolume::filled(
            f.channels(),
            f.width(),
            f.height(),
            1.0,
        ));
    }
    let integer_exponent = p.fract() == 0.0;
    let mut out = f.clone();
    for v in out.data_mut() {
        if *v < 0.0 && !integer_exponent {
            return Err(StatError::NegativeBase);
        }
        *v = v.powf(p);
    }
    Ok(out)
}

/// Upsample `fk` onto `fl`'s grid and blur it `blur_count` times; the
/// common preprocessing of the inter-layer statistics.
fn aligned_partner(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
) -> Result<ActivationVolume, StatError> {
    if !fl.width().is_multiple_of(fk.width()) || !fl.height().is_multiple_of(fk.height()) {
        return Err(StatError::SpatialMismatch {
            large: (fl.width(), fl.height()),
            small: (fk.width(), fk.height()),
        });
    }
    let fx = fl.width() / fk.width();
    let fy = fl.height() / fk.height();
    let up = nearest_upsample(fk, fx, fy)?;
    Ok(box_blur_n(&up, blur_count))
}

/// Adjoint of [`aligned_partner`]: blur (self-adjoint) then block-sum back
/// to `fk`'s grid.
fn aligned_partner_adjoint(
    grad_on_large: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
) -> Result<ActivationVolume, StatError> {
    let blurred = box_blur_n(grad_on_large, blur_count);
    let fx = grad_on_large.width() / fk.width();
    let fy = grad_on_large.height() / fk.height();
    Ok(block_sum_downsample(&blurred, fx, fy)?)
}

/// Inter-layer Gram `F_l [blur^n(up(F_k))]^T`, a `K_l x K_k` matrix.
pub fn interlayer_gram(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
) -> Result<GramStatistic, StatError> {
    let partner = aligned_partner(fl, fk, blur_count)?;
    let gram = matmul_bt(&fl.as_matrix(), &partner.as_matrix())?;
    let mut stat = GramStatistic::new(
        StatVariant::InterLayer,
        vec![fl.channels(), fk.channels()],
        gram.into_data(),
    );
    stat.blur_count = blur_count;
    Ok(stat)
}

fn interlayer_gram_vjp(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
    upstream: &Matrix,
) -> Result<(ActivationVolume, ActivationVolume), StatError> {
    let partner = aligned_partner(fl, fk, blur_count)?;
    // d/dF_l = U B
    let grad_l = matmul(upstream, &partner.as_matrix())?;
    let grad_l = ActivationVolume::new(fl.channels(), fl.width(), fl.height(), grad_l.into_data())
        .expect("gradient inherits fl shape");
    // d/dB = U^T A, pulled back through blur and upsampling
    let grad_b = matmul(&upstream.transposed(), &fl.as_matrix())?;
    let grad_b = ActivationVolume::new(fk.channels(), fl.width(), fl.height(), grad_b.into_data())
        .expect("partner gradient lives on fl's grid");
    let grad_k = aligned_partner_adjoint(&grad_b, fk, blur_count)?;
    Ok((grad_l, grad_k))
}

/// The 3x3 spatial offsets of the adjacent-correlation block, in block
/// order: row index maps to dx, column index to dy, both in {-1, 0, 1}.
pub const ADJACENT_OFFSETS: [(i64, i64); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Adjacent-offset inter-layer block: a `3 x 3 x K_l x K_k` volume whose
/// `(dx, dy)` slice is `F_l shift(up(F_k), dx, dy)^T`. The center slice
/// equals [`interlayer_gram`].
pub fn adjacent_gram(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
) -> Result<GramStatistic, StatError> {
    adjacent_gram_blurred(fl, fk, 0)
}

/// [`adjacent_gram`] with the partner map blurred before shifting, for
/// configurations that combine offsets with blurred correlations.
pub fn adjacent_gram_blurred(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
) -> Result<GramStatistic, StatError> {
    let partner = aligned_partner(fl, fk, blur_count)?;
    let (kl, kk) = (fl.channels(), fk.channels());
    let a = fl.as_matrix();
    let blocks = parallel::map_indexed(9, |slot| {
        let (dx, dy) = ADJACENT_OFFSETS[slot];
        let shifted = spatial_shift(&partner, dx, dy);
        matmul_bt(&a, &shifted.as_matrix())
            .expect("matching inner dims")
            .into_data()
    });
    let mut value = Vec::with_capacity(9 * kl * kk);
    for block in blocks {
        value.extend_from_slice(&block);
    }
    let mut stat = GramStatistic::new(StatVariant::AdjacentInterLayer, vec![3, 3, kl, kk], value);
    stat.blur_count = blur_count;
    Ok(stat)
}

fn adjacent_gram_vjp(
    fl: &ActivationVolume,
    fk: &ActivationVolume,
    blur_count: usize,
    upstream: &[f64],
) -> Result<(ActivationVolume, ActivationVolume), StatError> {
    let partner = aligned_partner(fl, fk, blur_count)?;
    let (kl, kk) = (fl.channels(), fk.channels());
    let block_len = kl * kk;
    let a = fl.as_matrix();

    let mut grad_l = ActivationVolume::zeros(fl.channels(), fl.width(), fl.height());
    let mut grad_partner = ActivationVolume::zeros(fk.channels(), fl.width(), fl.height());
    for (slot, &(dx, dy)) in ADJACENT_OFFSETS.iter().enumerate() {
        let u = Matrix::new(
            kl,
            kk,
            upstream[slot * block_len..(slot + 1) * block_len].to_vec(),
        )
        .expect("block is kl x kk");
        let shifted = spatial_shift(&partner, dx, dy);
        // d/dF_l from this block
        let gl = matmul(&u, &shifted.as_matrix())?;
        grad_l.accumulate(
            &ActivationVolume::new(kl, fl.width(), fl.height(), gl.into_data())
                .expect("gradient inherits fl shape"),
        );
        // d/d(shifted partner) pulled back through the shift adjoint
        let gp = matmul(&u.transposed(), &a)?;
        let gp = ActivationVolume::new(kk, fl.width(), fl.height(), gp.into_data())
            .expect("partner gradient lives on fl's grid");
        grad_partner.accumulate(&spatial_shift(&gp, -dx, -dy));
    }
    let grad_k = aligned_partner_adjoint(&grad_partner, fk, blur_count)?;
    Ok((grad_l, grad_k))
}

/// Content-aware Gram slices: `V[k, i, j] = sum_pos F_i F_j C_k` for a
/// weighting volume `C` on the same grid as `F`. Each `k` slice is exactly
/// symmetric.
pub fn content_aware_gram(
    fl: &ActivationVolume,
    fc: &ActivationVolume,
) -> Result<GramStatistic, StatError> {
    if fl.width() != fc.width() || fl.height() != fc.height() {
        return Err(StatError::SpatialMismatch {
            large: (fl.width(), fl.height()),
            small: (fc.width(), fc.height()),
        });
    }
    let (kc, kl) = (fc.channels(), fl.channels());
    let slices = parallel::map_indexed(kc, |k| weighted_symmetric_gram(fl, fc.channel(k)));
    let mut value = Vec::with_capacity(kc * kl * kl);
    for slice in slices {
        value.extend_from_slice(&slice);
    }
    Ok(GramStatistic::new(
        StatVariant::ContentAware,
        vec![kc, kl, kl],
        value,
    ))
}

fn content_aware_gram_vjp(
    fl: &ActivationVolume,
    fc: &ActivationVolume,
    upstream: &[f64],
) -> Result<(ActivationVolume, ActivationVolume), StatError> {
    let (kc, kl, m) = (fc.channels(), fl.channels(), fl.positions());
    let a = fl.as_matrix();
    let mut grad_l = ActivationVolume::zeros(fl.channels(), fl.width(), fl.height());
    let mut grad_c = ActivationVolume::zeros(fc.channels(), fc.width(), fc.height());
    for k in 0..kc {
        let u = Matrix::new(kl, kl, upstream[k * kl * kl..(k + 1) * kl * kl].to_vec())
            .expect("slice is kl x kl");
        let weights = fc.channel(k);
        // dF_i(pos) += C_k(pos) * sum_j (U + U^T)[i, j] F_j(pos)
        let sym = add_transpose(&u);
        let reach = matmul(&sym, &a).expect("matching inner dims");
        for i in 0..kl {
            let dst = &mut grad_l.data_mut()[i * m..(i + 1) * m];
            let src = reach.row(i);
            for pos in 0..m {
                dst[pos] += weights[pos] * src[pos];
            }
        }
        // dC_k(pos) = sum_i F_i(pos) * (U A)[i, pos]
        let t = matmul(&u, &a).expect("matching inner dims");
        let dst = &mut grad_c.data_mut()[k * m..(k + 1) * m];
        for i in 0..kl {
            let f_row = fl.channel(i);
            let t_row = t.row(i);
            for pos in 0..m {
                dst[pos] += f_row[pos] * t_row[pos];
            }
        }
    }
    Ok((grad_l, grad_c))
}

/// Triple-correlation Gram cube `V[k, i, j] = sum_pos F_i F_j F_k`,
/// symmetric under swapping `i` and `j`.
pub fn gram_cube(f: &ActivationVolume) -> GramStatistic {
    let k_n = f.channels();
    let slices = parallel::map_indexed(k_n, |k| weighted_symmetric_gram(f, f.channel(k)));
    let mut value = Vec::with_capacity(k_n * k_n * k_n);
    for slice in slices {
        value.extend_from_slice(&slice);
    }
    GramStatistic::new(StatVariant::GramCube, vec![k_n, k_n, k_n], value)
}

fn gram_cube_vjp(f: &ActivationVolume, upstream: &[f64]) -> ActivationVolume {
    let (k_n, m) = (f.channels(), f.positions());
    // per position: g_a = <f, v_a> + sum_k f_k (v_k[a] + w_k[a])
    // with v_k = U_k f and w_k = U_k^T f
    let columns = parallel::map_indexed(m, |pos| {
        let mut fvec = vec![0.0; k_n];
        for (k, fv) in fvec.iter_mut().enumerate() {
            *fv = f.channel(k)[pos];
        }
        let mut grad = vec![0.0; k_n];
        for k in 0..k_n {
            let slice = &upstream[k * k_n * k_n..(k + 1) * k_n * k_n];
            let mut quad = 0.0;
            for i in 0..k_n {
                let fi = fvec[i];
                let row = &slice[i * k_n..(i + 1) * k_n];
                let mut dot_row = 0.0;
                for j in 0..k_n {
                    dot_row += row[j] * fvec[j];
                    // w contribution: U[k, i, a] f_i f_k summed over i
                    grad[j] += row[j] * fi * fvec[k];
                }
                quad += fi * dot_row;
                // v contribution: U[k, a, j] f_j f_k summed over j
                grad[i] += dot_row * fvec[k];
            }
            grad[k] += quad;
        }
        grad
    });
    let mut out = ActivationVolume::zeros(k_n, f.width(), f.height());
    for (pos, col) in columns.iter().enumerate() {
        for (k, g) in col.iter().enumerate() {
            out.data_mut()[k * m + pos] = *g;
        }
    }
    out
}

/// Gram of `f` with per-position weights, exactly symmetric by mirroring
/// the upper triangle.
fn weighted_symmetric_gram(f: &ActivationVolume, weights: &[f64]) -> Vec<f64> {
    let (k_n, m) = (f.channels(), f.positions());
    let mut slice = vec![0.0; k_n * k_n];
    for i in 0..k_n {
        let fi = f.channel(i);
        for j in i..k_n {
            let fj = f.channel(j);
            let mut acc = 0.0;
            for pos in 0..m {
                acc += fi[pos] * fj[pos] * weights[pos];
            }
            slice[i * k_n + j] = acc;
            slice[j * k_n + i] = acc;
        }
    }
    slice
}

fn add_transpose(m: &Matrix) -> Matrix {
    let n = m.rows();
    debug_assert_eq!(n, m.cols());
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, m.get(i, j) + m.get(j, i));
        }
    }
    out
}

/// Parameters that select and configure a statistic variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatParams {
    pub variant: StatVariant,
    /// Activation shift applied to style-layer inputs before the product.
    pub shift: f64,
    /// Elementwise exponent for [`StatVariant::Amplified`].
    pub power: f64,
    /// Box-blur repetitions for the inter-layer variants.
    pub blur_count: usize,
}

impl StatParams {
    pub fn plain(variant: StatVariant) -> Self {
        Self {
            variant,
            shift: 0.0,
            power: 1.0,
            blur_count: 0,
        }
    }
}

/// Input volumes for a statistic: one volume or an ordered pair.
#[derive(Debug, Clone, Copy)]
pub enum StatInputs<'a> {
    Single(&'a ActivationVolume),
    Pair(&'a ActivationVolume, &'a ActivationVolume),
}

impl<'a> StatInputs<'a> {
    fn single(self, variant: StatVariant) -> Result<&'a ActivationVolume, StatError> {
        match self {
            StatInputs::Single(f) => Ok(f),
            StatInputs::Pair(..) => Err(StatError::ArityMismatch { variant }),
        }
    }

    fn pair(
        self,
        variant: StatVariant,
    ) -> Result<(&'a ActivationVolume, &'a ActivationVolume), StatError> {
        match self {
            StatInputs::Pair(a, b) => Ok((a, b)),
            StatInputs::Single(_) => Err(StatError::ArityMismatch { variant }),
        }
    }
}

/// Evaluate the configured statistic. The activation shift is applied to
/// the style inputs here so that every variant composes with shifting the
/// same way; the content weighting volume of `ContentAware` stays unshifted.
pub fn statistic_value(
    inputs: StatInputs,
    params: &StatParams,
) -> Result<GramStatistic, StatError> {
    match params.variant {
        StatVariant::PlainGram => Ok(shifted_gram(inputs.single(params.variant)?, 0.0)),
        StatVariant::ShiftedGram => {
            let mut stat = shifted_gram(inputs.single(params.variant)?, params.shift);
            stat.variant = StatVariant::ShiftedGram;
            Ok(stat)
        }
        StatVariant::Amplified => {
            let f = inputs.single(params.variant)?;
            if params.power < 1.0 {
                return Err(StatError::PowerRange {
                    power: params.power,
                });
            }
            amplified_gram(&f.shifted(params.shift), params.power)
        }
        StatVariant::InterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            interlayer_gram(
                &fl.shifted(params.shift),
                &fk.shifted(params.shift),
                params.blur_count,
            )
        }
        StatVariant::AdjacentInterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            adjacent_gram_blurred(
                &fl.shifted(params.shift),
                &fk.shifted(params.shift),
                params.blur_count,
            )
        }
        StatVariant::ContentAware => {
            let (fl, fc) = inputs.pair(params.variant)?;
            content_aware_gram(&fl.shifted(params.shift), fc)
        }
        StatVariant::GramCube => {
            let f = inputs.single(params.variant)?;
            Ok(gram_cube(&f.shifted(params.shift)))
        }
    }
}

/// Gradient of `<upstream, statistic_value(inputs)>` with respect to each
/// input volume, returned in input order. Constant shifts drop out of the
/// chain rule, so the shift needs no extra handling here beyond evaluating
/// the factors at `F + s`.
pub fn statistic_vjp(
    inputs: StatInputs,
    params: &StatParams,
    upstream: &[f64],
) -> Result<Vec<ActivationVolume>, StatError> {
    let expected = statistic_shape(inputs, params)?.iter().product::<usize>();
    if upstream.len() != expected {
        return Err(StatError::UpstreamShape {
            expected,
            got: upstream.len(),
        });
    }
    match params.variant {
        StatVariant::PlainGram | StatVariant::ShiftedGram => {
            let f = inputs.single(params.variant)?;
            let shift = if params.variant == StatVariant::PlainGram {
                0.0
            } else {
                params.shift
            };
            let u = Matrix::new(f.channels(), f.channels(), upstream.to_vec())?;
            Ok(vec![shifted_gram_vjp(f, shift, &u)])
        }
        StatVariant::Amplified => {
            let f = inputs.single(params.variant)?;
            if params.power < 1.0 {
                return Err(StatError::PowerRange {
                    power: params.power,
                });
            }
            let shifted = f.shifted(params.shift);
            let u = Matrix::new(f.channels(), f.channels(), upstream.to_vec())?;
            Ok(vec![amplified_gram_vjp(&shifted, params.power, &u)?])
        }
        StatVariant::InterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            let u = Matrix::new(fl.channels(), fk.channels(), upstream.to_vec())?;
            let (gl, gk) = interlayer_gram_vjp(
                &fl.shifted(params.shift),
                &fk.shifted(params.shift),
                params.blur_count,
                &u,
            )?;
            Ok(vec![gl, gk])
        }
        StatVariant::AdjacentInterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            let (gl, gk) = adjacent_gram_vjp(
                &fl.shifted(params.shift),
                &fk.shifted(params.shift),
                params.blur_count,
                upstream,
            )?;
            Ok(vec![gl, gk])
        }
        StatVariant::ContentAware => {
            let (fl, fc) = inputs.pair(params.variant)?;
            let (gl, gc) = content_aware_gram_vjp(&fl.shifted(params.shift), fc, upstream)?;
            Ok(vec![gl, gc])
        }
        StatVariant::GramCube => {
            let f = inputs.single(params.variant)?;
            Ok(vec![gram_cube_vjp(&f.shifted(params.shift), upstream)])
        }
    }
}

/// Shape the configured statistic would have, without computing it.
pub fn statistic_shape(inputs: StatInputs, params: &StatParams) -> Result<Vec<usize>, StatError> {
    Ok(match params.variant {
        StatVariant::PlainGram | StatVariant::ShiftedGram | StatVariant::Amplified => {
            let k = inputs.single(params.variant)?.channels();
            vec![k, k]
        }
        StatVariant::InterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            vec![fl.channels(), fk.channels()]
        }
        StatVariant::AdjacentInterLayer => {
            let (fl, fk) = inputs.pair(params.variant)?;
            vec![3, 3, fl.channels(), fk.channels()]
        }
        StatVariant::ContentAware => {
            let (fl, fc) = inputs.pair(params.variant)?;
            vec![fc.channels(), fl.channels(), fl.channels()]
        }
        StatVariant::GramCube => {
            let k = inputs.single(params.variant)?.channels();
            vec![k, k, k]
        }
    })
}
