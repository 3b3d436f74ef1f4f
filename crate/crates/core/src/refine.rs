//! Weighted refinement of velocities and scale with accelerometer bias and a
//! two-parameter gravity correction in the tangent plane of the seed gravity.
//!
//! Unknowns are `[v₀ … v_{N−1}, b_a, w₁, w₂, s]` (3N + 6 entries). Per-pair
//! residual blocks are weighted by `exp(−‖e‖)` and the weighted normal
//! equations are solved by a fixed number of Jacobi-preconditioned CG steps.
//!
//! The bias direction is by far the worst conditioned one, so by default the
//! CG steps run on the normal equations reduced onto `b_a`, with the other
//! unknowns eliminated exactly. [`PcgOperator::Full`] iterates on the whole
//! system instead, which leaves the bias nearly at its seed after four steps.

use nalgebra::{DMatrix, DVector, Matrix3x2};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::linear_align::{Extrinsics, KeyframeTrack, LinearSolution, MIN_KEYFRAMES, MIN_SCALE};
use crate::preintegration::PreintegratedDelta;

pub const DEFAULT_GRAVITY: f64 = 9.81;
pub const DEFAULT_PCG_ITERATIONS: usize = 4;
pub const DEFAULT_IRLS_PASSES: usize = 2;
/// Tangent coefficients beyond this fraction of |g| are treated as divergence.
pub const MAX_TANGENT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    /// Seed gravity with the configured magnitude.
    pub g0: Vec3,
    pub b1: Vec3,
    pub b2: Vec3,
}

impl TangentBasis {
    /// `[b1 b2]` as a 3×2 matrix.
    pub fn matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.b1, self.b2])
    }

    pub fn magnitude(&self) -> f64 {
        self.g0.norm()
    }
}

/// Builds an orthonormal tangent basis around the gravity direction `g_unit`.
pub fn tangent_basis(g_unit: &Vec3, magnitude: f64) -> Result<TangentBasis> {
    let norm = g_unit.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidInput("gravity direction is zero".into()));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::InvalidInput(format!("gravity magnitude {magnitude} must be positive")));
    }
    let g = g_unit / norm;
    let x = Vec3::x();
    let a = if g.dot(&x).abs() > 0.9 { Vec3::y() } else { x };
    let b1 = g.cross(&a).normalize();
    let b2 = g.cross(&b1);
    Ok(TangentBasis { g0: g * magnitude, b1, b2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWeights {
    pub w_alpha: f64,
    pub w_beta: f64,
    pub e_alpha: Vec3,
    pub e_beta: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub pcg_iterations: usize,
    pub irls_passes: usize,
    pub gravity_magnitude: f64,
    /// Tikhonov damping on the accelerometer-bias block of the normal matrix.
    pub ba_damping: f64,
    pub pcg_operator: PcgOperator,
}

/// Which linear operator the PCG iterations run on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PcgOperator {
    /// The full weighted normal equations over all 3N + 6 unknowns.
    Full,
    /// The Schur complement onto the accelerometer bias; velocities, gravity
    /// tangent and scale are eliminated by Cholesky and back-substituted.
    #[default]
    BiasSchur,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            pcg_iterations: DEFAULT_PCG_ITERATIONS,
            irls_passes: DEFAULT_IRLS_PASSES,
            gravity_magnitude: DEFAULT_GRAVITY,
            ba_damping: 0.0,
            pcg_operator: PcgOperator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSolution {
    pub velocities: Vec<Vec3>,
    pub accel_bias: Vec3,
    pub w1: f64,
    pub w2: f64,
    pub scale: f64,
    /// `g0 + w₁b₁ + w₂b₂` rescaled to the configured magnitude.
    pub gravity: Vec3,
    pub basis: TangentBasis,
    /// Weights of the last pass, one per keyframe pair.
    pub weights: Vec<PairWeights>,
}

impl RefinedSolution {
    pub fn to_vector(&self) -> DVector<f64> {
        pack(&self.velocities, &self.accel_bias, self.w1, self.w2, self.scale)
    }
}

fn pack(velocities: &[Vec3], ba: &Vec3, w1: f64, w2: f64, s: f64) -> DVector<f64> {
    let n = velocities.len();
    let mut x = DVector::zeros(3 * n + 6);
    for (k, v) in velocities.iter().enumerate() {
        x.fixed_rows_mut::<3>(3 * k).copy_from(v);
    }
    x.fixed_rows_mut::<3>(3 * n).copy_from(ba);
    x[3 * n + 3] = w1;
    x[3 * n + 4] = w2;
    x[3 * n + 5] = s;
    x
}

/// Seed embedding `[v, 0, 0, 0, s]` of a linear solution.
pub fn seed_vector(seed: &LinearSolution) -> DVector<f64> {
    pack(&seed.velocities, &Vec3::zeros(), 0.0, 0.0, seed.scale)
}

pub fn build_refined_block(
    k: usize,
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    delta: &PreintegratedDelta,
    basis: &TangentBasis,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = track.len();
    if n < 2 || k + 1 >= n {
        return Err(Error::PairOutOfRange { k, n });
    }
    let r_bw = track.rotations[k].matrix().transpose();
    let r_wb_next = track.rotations[k + 1].matrix();
    let dt = delta.dt;
    let b = basis.matrix();
    let ba = 3 * n;
    let w = ba + 3;
    let s = ba + 5;

    let mut h = DMatrix::zeros(6, 3 * n + 6);
    h.fixed_view_mut::<3, 3>(0, 3 * k).copy_from(&(-r_bw * dt));
    h.fixed_view_mut::<3, 3>(0, ba).copy_from(&(-delta.j_dp_dba));
    h.fixed_view_mut::<3, 2>(0, w).copy_from(&(-r_bw * b * (0.5 * dt * dt)));
    h.fixed_view_mut::<3, 1>(0, s)
        .copy_from(&(r_bw * (track.positions[k + 1] - track.positions[k])));
    h.fixed_view_mut::<3, 3>(3, 3 * k).copy_from(&(-r_bw));
    h.fixed_view_mut::<3, 3>(3, 3 * (k + 1)).copy_from(&r_bw);
    h.fixed_view_mut::<3, 3>(3, ba).copy_from(&(-delta.j_dv_dba));
    h.fixed_view_mut::<3, 2>(3, w).copy_from(&(-r_bw * b * dt));

    // ba_used is folded into Z so the bias column carries the absolute bias.
    let lever = extrinsics.translation;
    let mut z = DVector::zeros(6);
    z.fixed_rows_mut::<3>(0).copy_from(
        &(delta.dp - delta.j_dp_dba * delta.ba_used - lever
            + r_bw * r_wb_next * lever
            + r_bw * basis.g0 * (0.5 * dt * dt)),
    );
    z.fixed_rows_mut::<3>(3)
        .copy_from(&(delta.dv - delta.j_dv_dba * delta.ba_used + r_bw * basis.g0 * dt));
    Ok((h, z))
}

pub fn compute_weights(h: &DMatrix<f64>, z: &DVector<f64>, x: &DVector<f64>) -> Result<PairWeights> {
    if h.nrows() != 6 || z.len() != 6 {
        return Err(Error::InvalidInput(format!("pair block must have 6 rows, got {}", h.nrows())));
    }
    if h.ncols() != x.len() {
        return Err(Error::LengthMismatch { what: "block columns and state", left: h.ncols(), right: x.len() });
    }
    let e = h * x - z;
    let e_alpha: Vec3 = e.fixed_rows::<3>(0).into_owned();
    let e_beta: Vec3 = e.fixed_rows::<3>(3).into_owned();
    Ok(PairWeights { w_alpha: (-e_alpha.norm()).exp(), w_beta: (-e_beta.norm()).exp(), e_alpha, e_beta })
}

/// Stacked pair blocks of the refinement system.
#[derive(Debug, Clone)]
pub struct RefineSystem {
    pub blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl RefineSystem {
    pub fn build(
        track: &KeyframeTrack,
        extrinsics: &Extrinsics,
        deltas: &[PreintegratedDelta],
        basis: &TangentBasis,
    ) -> Result<Self> {
        let n = track.len();
        if deltas.len() + 1 != n {
            return Err(Error::LengthMismatch { what: "preintegrated intervals and keyframe pairs", left: deltas.len(), right: n.saturating_sub(1) });
        }
        let blocks = deltas
            .iter()
            .enumerate()
            .map(|(k, d)| build_refined_block(k, track, extrinsics, d, basis))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn unknowns(&self) -> usize {
        self.blocks.first().map_or(0, |(h, _)| h.ncols())
    }

    pub fn weights_at(&self, x: &DVector<f64>) -> Result<Vec<PairWeights>> {
        self.blocks.iter().map(|(h, z)| compute_weights(h, z, x)).collect()
    }

    /// `Σ ‖W(Hx − Z)‖²`
    pub fn weighted_cost(&self, x: &DVector<f64>, weights: &[PairWeights]) -> f64 {
        self.blocks
            .iter()
            .zip(weights)
            .map(|((h, z), w)| {
                let e = h * x - z;
                w.w_alpha.powi(2) * e.rows(0, 3).norm_squared() + w.w_beta.powi(2) * e.rows(3, 3).norm_squared()
            })
            .sum()
    }

    /// Normal matrix `Σ HᵀW²H` and right-hand side `Σ HᵀW²Z`.
    pub fn normal_equations(&self, weights: &[PairWeights]) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.unknowns();
        let mut a = DMatrix::zeros(m, m);
        let mut b = DVector::zeros(m);
        for ((h, z), w) in self.blocks.iter().zip(weights) {
            let mut wh = h.clone();
            let mut wz = z.clone();
            wh.rows_mut(0, 3).scale_mut(w.w_alpha);
            wh.rows_mut(3, 3).scale_mut(w.w_beta);
            wz.rows_mut(0, 3).scale_mut(w.w_alpha);
            wz.rows_mut(3, 3).scale_mut(w.w_beta);
            a += wh.tr_mul(&wh);
            b += wh.tr_mul(&wz);
        }
        (a, b)
    }
}

/// Jacobi-preconditioned conjugate gradient on `A·x = b`, running at most
/// `iterations` steps from `x0`.
pub fn pcg_jacobi(a: &DMatrix<f64>, b: &DVector<f64>, x0: &DVector<f64>, iterations: usize) -> Result<DVector<f64>> {
    let diag = a.diagonal();
    if let Some(column) = diag.iter().position(|d| *d <= 0.0 || !d.is_finite()) {
        return Err(Error::DegenerateWeights { column });
    }
    let inv_diag = diag.map(|d| 1.0 / d);
    let mut x = x0.clone();
    let mut r = b - a * &x;
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..iterations {
        if rz <= f64::MIN_POSITIVE {
            break;
        }
        let ap = a * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        p = &z + &p * (rz_next / rz);
        rz = rz_next;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite PCG iterate".into()));
    }
    Ok(x)
}

/// PCG restricted to the unknowns listed in `keep`: every other unknown is
/// eliminated exactly through the Schur complement and recovered afterwards
/// by back-substitution.
pub fn pcg_schur(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    keep: &[usize],
    iterations: usize,
) -> Result<DVector<f64>> {
    let m = a.nrows();
    if let Some(column) = a.diagonal().iter().position(|d| *d <= 0.0 || !d.is_finite()) {
        return Err(Error::DegenerateWeights { column });
    }
    let elim: Vec<usize> = (0..m).filter(|i| !keep.contains(i)).collect();
    let a_ee = a.select_rows(&elim).select_columns(&elim);
    let a_ek = a.select_rows(&elim).select_columns(keep);
    let a_kk = a.select_rows(keep).select_columns(keep);
    let b_e = b.select_rows(&elim);
    let b_k = b.select_rows(keep);
    let chol = a_ee
        .cholesky()
        .ok_or_else(|| Error::Divergence("eliminated block of the normal matrix is not positive definite".into()))?;
    let s = &a_kk - a_ek.transpose() * chol.solve(&a_ek);
    let r = &b_k - a_ek.transpose() * chol.solve(&b_e);
    let x_k = pcg_jacobi(&s, &r, &x0.select_rows(keep), iterations)?;
    let x_e = chol.solve(&(b_e - &a_ek * &x_k));
    let mut x = DVector::zeros(m);
    for (i, &row) in keep.iter().enumerate() {
        x[row] = x_k[i];
    }
    for (i, &row) in elim.iter().enumerate() {
        x[row] = x_e[i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite PCG iterate".into()));
    }
    Ok(x)
}

/// `g0 + w₁b₁ + w₂b₂`, rescaled to the magnitude of `g0`.
pub fn recover_gravity(w1: f64, w2: f64, basis: &TangentBasis) -> Vec3 {
    let g = basis.g0 + basis.b1 * w1 + basis.b2 * w2;
    g * (basis.magnitude() / g.norm())
}

pub fn refine(
    seed: &LinearSolution,
    track: &KeyframeTrack,
    extrinsics: &Extrinsics,
    deltas: &[PreintegratedDelta],
    config: &RefineConfig,
) -> Result<RefinedSolution> {
    let n = track.len();
    if n < MIN_KEYFRAMES {
        return Err(Error::TooFewKeyframes { required: MIN_KEYFRAMES, got: n });
    }
    if seed.velocities.len() != n {
        return Err(Error::LengthMismatch { what: "seed velocities and keyframes", left: seed.velocities.len(), right: n });
    }
    if !(seed.scale.is_finite() && seed.scale > 0.0) {
        return Err(Error::DegenerateScale { scale: seed.scale });
    }
    if config.irls_passes == 0 {
        return Err(Error::InvalidInput("at least one weighting pass is required".into()));
    }
    let basis = tangent_basis(&seed.gravity, config.gravity_magnitude)?;
    let system = RefineSystem::build(track, extrinsics, deltas, &basis)?;

    let mut x = seed_vector(seed);
    let mut weights = Vec::new();
    for pass in 0..config.irls_passes {
        weights = system.weights_at(&x)?;
        let (mut a, b) = system.normal_equations(&weights);
        for i in 0..3 {
            a[(3 * n + i, 3 * n + i)] += config.ba_damping;
        }
        x = match config.pcg_operator {
            PcgOperator::Full => pcg_jacobi(&a, &b, &x, config.pcg_iterations)?,
            PcgOperator::BiasSchur => {
                let keep: Vec<usize> = (3 * n..3 * n + 3).collect();
                pcg_schur(&a, &b, &x, &keep, config.pcg_iterations)?
            }
        };
        log::debug!("refine pass {pass}: cost {:.3e}", system.weighted_cost(&x, &weights));
    }

    let w1 = x[3 * n + 3];
    let w2 = x[3 * n + 4];
    let scale = x[3 * n + 5];
    let bound = MAX_TANGENT_FRACTION * config.gravity_magnitude;
    if w1.abs() > bound || w2.abs() > bound {
        return Err(Error::Divergence(format!("gravity tangent step ({w1:.3}, {w2:.3}) exceeds {bound:.3}")));
    }
    if scale < MIN_SCALE {
        return Err(Error::DegenerateScale { scale });
    }
    Ok(RefinedSolution {
        velocities: (0..n).map(|k| x.fixed_rows::<3>(3 * k).into_owned()).collect(),
        accel_bias: x.fixed_rows::<3>(3 * n).into_owned(),
        w1,
        w2,
        scale,
        gravity: recover_gravity(w1, w2, &basis),
        basis,
        weights,
    })
}
