//! HUM machinery: homogeneous adjoint solves, observability estimation, the
//! matrix-free Gramian Λ, its conjugate-gradient inversion, control synthesis,
//! and closed-loop verification.
//!
//! The construction is built around exact discrete duality. The forward map B
//! records midpoint velocities of the conservative flow on the damping
//! support; Λ = B*∘B with the adjoint taken in the tagged inner product, so
//! Λ is symmetric positive semidefinite by construction and
//! ⟨ΛΦ, Φ⟩ equals the discrete observability integral ∫∫ c|ψ_t|² identically.
//! The control's time derivative is never formed numerically: it is moved
//! onto test functions by discrete integration by parts, which is what makes
//! the closed-loop terminal state equal the CG residual in the strong space.
//!
//! In the strong space the adjoint pass is the same midpoint stepper with
//! negated dt (the flow is an isometry there). In the weak space the flow is
//! not a D-isometry, so the adjoint pass conjugates the transposed stepper
//! with the D Gram map, one Poisson solve per application.

use crate::discretization::{cg_solve, dot, grad_quadratic_form, ModeProjector, SolveError};
use crate::dynamics::{StateVector, StepMode, StepperCore};
use crate::scenario::{Scenario, Setup};
use crate::spectral::SpaceTag;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("zero initial data has no observability ratio")]
    ZeroInitialData,
    #[error("conservative run drifted by {drift:.3e} (limit 1e-7): scheme misconfiguration")]
    ConservationViolated { drift: f64 },
}

/// Initial data for the homogeneous adjoint problem, tagged by the space its
/// norm is measured in.
#[derive(Debug, Clone)]
pub struct AdjointData {
    pub state: StateVector,
    pub space: SpaceTag,
}

/// Recorded control data: minimizer velocities on the damping support and the
/// synthesized source values c·ψ_t.
#[derive(Debug, Clone)]
pub struct ControlTrace {
    /// Half-step times (n + ½)dt.
    pub times: Vec<f64>,
    /// Node indices of supp(c).
    pub support: Vec<usize>,
    /// velocities[n][j]: adjoint midpoint velocity at support node j.
    pub velocities: Vec<Vec<f64>>,
    /// control[n][j] = c_j · velocities[n][j], the source actually injected.
    pub control: Vec<Vec<f64>>,
}

/// Everything hum_solve produces.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub minimizer: StateVector,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Observability ratio of the minimizer.
    pub observability_ratio: f64,
    pub control: ControlTrace,
    /// Filled by `verify_control`; relative to the tagged norm of U₀.
    pub terminal_residual: Option<f64>,
}

/// Summary of one homogeneous adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointSummary {
    pub energy_initial: f64,
    pub energy_final: f64,
    /// |E(T) − E(0)|/E(0) in the strong norm, which the conservative flow
    /// preserves exactly up to solver residual.
    pub drift: f64,
    pub final_state: StateVector,
}

/// Prebuilt solver state for one scenario: steppers for the forward and
/// adjoint passes plus the recording support.
pub struct HumContext {
    pub setup: Setup,
    pub space: SpaceTag,
    support: Vec<usize>,
    weights: Vec<f64>,
}

impl HumContext {
    pub fn new(scenario: &Scenario) -> Self {
        let setup = scenario.build();
        let space = setup.space;
        let support = setup.coeffs.c.support();
        let weights = support
            .iter()
            .map(|&i| setup.coeffs.c.samples[i])
            .collect();
        HumContext {
            setup,
            space,
            support,
            weights,
        }
    }

    pub fn with_space(scenario: &Scenario, space: SpaceTag) -> Self {
        let mut ctx = Self::new(scenario);
        ctx.space = space;
        ctx
    }

    pub fn n_steps(&self) -> usize {
        self.setup.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.setup.dt
    }

    /// Tagged inner product: the strong space uses
    /// a(∇u,∇ũ) + (v,ṽ) + (∇y,∇ỹ) + (z,z̃); the weak space swaps the second
    /// pair for (y,ỹ) + (z,z̃)_{H⁻¹}.
    pub fn inner(&self, x: &StateVector, y: &StateVector) -> f64 {
        let grid = &self.setup.grid;
        let hd = grid.cell_volume();
        let a = self.setup.coeffs.a;
        let common = a * grad_quadratic_form(&x.u, &y.u, grid) + dot(&x.v, &y.v);
        match self.space {
            SpaceTag::Strong => {
                hd * (common + grad_quadratic_form(&x.y, &y.y, grid) + dot(&x.z, &y.z))
            }
            SpaceTag::Weak => {
                let lz = self.setup.poisson.solve(&y.z);
                hd * (common + dot(&x.y, &y.y) + dot(&x.z, &lz))
            }
        }
    }

    pub fn norm(&self, x: &StateVector) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    fn gram_apply(&self, x: &StateVector) -> StateVector {
        // G_D x = h^d (aL x_u, x_v, x_y, L⁻¹ x_z)
        let hd = self.setup.grid.cell_volume();
        let a = self.setup.coeffs.a;
        let lu = self.setup.lap.apply_vec(&x.u);
        let linv_z = self.setup.poisson.solve(&x.z);
        StateVector {
            u: lu.iter().map(|t| hd * a * t).collect(),
            v: x.v.iter().map(|t| hd * t).collect(),
            y: x.y.iter().map(|t| hd * t).collect(),
            z: linv_z.iter().map(|t| hd * t).collect(),
        }
    }

    fn gram_solve(&self, x: &StateVector) -> StateVector {
        // G_D⁻¹ x = h^{-d} ((aL)⁻¹ x_u, x_v, x_y, L x_z)
        let hd = self.setup.grid.cell_volume();
        let a = self.setup.coeffs.a;
        let linv_u = self.setup.poisson.solve(&x.u);
        let lz = self.setup.lap.apply_vec(&x.z);
        StateVector {
            u: linv_u.iter().map(|t| t / (a * hd)).collect(),
            v: x.v.iter().map(|t| t / hd).collect(),
            y: x.y.iter().map(|t| t / hd).collect(),
            z: lz.iter().map(|t| t / hd).collect(),
        }
    }

    fn forward_core(&self) -> StepperCore<'_> {
        StepperCore::new(
            &self.setup.lap,
            &self.setup.coeffs,
            self.setup.dt,
            StepMode::Homogeneous,
        )
    }

    /// S^★: tagged adjoint of one forward step. Strong space: the same
    /// stepper with negated dt. Weak space: Gram-conjugated transpose.
    fn star_step(&self, x: &StateVector) -> Result<StateVector, SolveError> {
        match self.space {
            SpaceTag::Strong => {
                let core = StepperCore::new(
                    &self.setup.lap,
                    &self.setup.coeffs,
                    -self.setup.dt,
                    StepMode::Homogeneous,
                );
                core.advance(x, None).map(|(s, _)| s)
            }
            SpaceTag::Weak => {
                let core = StepperCore::new(
                    &self.setup.lap,
                    &self.setup.coeffs,
                    self.setup.dt,
                    StepMode::WeakAdjoint,
                );
                let gx = self.gram_apply(x);
                let tg = core.advance(&gx, None).map(|(s, _)| s)?;
                Ok(self.gram_solve(&tg))
            }
        }
    }

    /// (S^★)⁻¹: the transposition evolution of the controlled system.
    fn star_inv_step(&self, x: &StateVector) -> Result<StateVector, SolveError> {
        match self.space {
            SpaceTag::Strong => self.forward_core().advance(x, None).map(|(s, _)| s),
            SpaceTag::Weak => {
                let core = StepperCore::new(
                    &self.setup.lap,
                    &self.setup.coeffs,
                    -self.setup.dt,
                    StepMode::WeakAdjoint,
                );
                let gx = self.gram_apply(x);
                let tg = core.advance(&gx, None).map(|(s, _)| s)?;
                Ok(self.gram_solve(&tg))
            }
        }
    }

    /// Forward conservative solve, recording midpoint velocities on supp(c).
    pub fn record_forward(&self, phi0: &StateVector) -> Result<(Vec<Vec<f64>>, StateVector), SolveError> {
        let core = self.forward_core();
        let mut state = phi0.clone();
        let mut rows = Vec::with_capacity(self.setup.n_steps);
        for _ in 0..self.setup.n_steps {
            let (next, mid) = core.advance(&state, None)?;
            rows.push(self.support.iter().map(|&i| mid.v[i]).collect());
            state = next;
        }
        Ok((rows, state))
    }

    /// Discrete observability integral dt·h^d·ΣΣ c|ψ_t|² of a recorded trace.
    pub fn observability_integral(&self, rows: &[Vec<f64>]) -> f64 {
        let hd = self.setup.grid.cell_volume();
        let mut acc = 0.0;
        for row in rows {
            for (w, v) in self.weights.iter().zip(row) {
                acc += w * v * v;
            }
        }
        self.setup.dt * hd * acc
    }

    /// Expands a support row into the full-grid source c·ρ.
    fn expand_source(&self, row: &[f64], out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = 0.0;
        }
        for ((&i, &w), &v) in self.support.iter().zip(&self.weights).zip(row) {
            out[i] = w * v;
        }
    }

    /// ΛΦ₀ = B*(BΦ₀): forward recording then the retrograde adjoint
    /// accumulation ξ_n = S^★(ξ_{n+1} + q_n) + q_n with
    /// q_n = (dt/2)(0, c·ρ_n, 0, 0).
    pub fn apply_gramian(&self, phi0: &StateVector) -> Result<StateVector, SolveError> {
        let (rows, _) = self.record_forward(phi0)?;
        self.adjoint_accumulate(&rows)
    }

    pub(crate) fn adjoint_accumulate(&self, rows: &[Vec<f64>]) -> Result<StateVector, SolveError> {
        let n = self.setup.grid.len();
        let half_dt = 0.5 * self.setup.dt;
        let mut xi = StateVector::zeros(n);
        let mut src = vec![0.0; n];
        for row in rows.iter().rev() {
            self.expand_source(row, &mut src);
            for i in 0..n {
                xi.v[i] += half_dt * src[i];
            }
            xi = self.star_step(&xi)?;
            for i in 0..n {
                xi.v[i] += half_dt * src[i];
            }
        }
        Ok(xi)
    }

    /// Controlled solve from U₀ driven by the recorded source rows; returns
    /// the terminal state. One step is W ← (S^★)⁻¹(W + (dt/2)F) + (dt/2)F.
    pub fn controlled_terminal(
        &self,
        u0: &StateVector,
        rows: &[Vec<f64>],
    ) -> Result<StateVector, SolveError> {
        let n = self.setup.grid.len();
        let half_dt = 0.5 * self.setup.dt;
        let mut w = u0.clone();
        let mut src = vec![0.0; n];
        for row in rows {
            self.expand_source(row, &mut src);
            for i in 0..n {
                w.v[i] += half_dt * src[i];
            }
            w = self.star_inv_step(&w)?;
            for i in 0..n {
                w.v[i] += half_dt * src[i];
            }
        }
        Ok(w)
    }
}

/// Runs the homogeneous system from Φ₀, asserting strong-energy conservation,
/// and returns the recorded velocity trace.
pub fn solve_adjoint(
    phi0: &AdjointData,
    scenario: &Scenario,
) -> Result<(AdjointSummary, ControlTrace), ControlError> {
    let ctx = HumContext::with_space(scenario, phi0.space);
    solve_adjoint_ctx(&ctx, &phi0.state)
}

pub fn solve_adjoint_ctx(
    ctx: &HumContext,
    phi0: &StateVector,
) -> Result<(AdjointSummary, ControlTrace), ControlError> {
    let e0 = crate::dynamics::energy_strong(phi0, &ctx.setup.coeffs, &ctx.setup.grid);
    let (rows, final_state) = ctx.record_forward(phi0)?;
    let et = crate::dynamics::energy_strong(&final_state, &ctx.setup.coeffs, &ctx.setup.grid);
    let drift = if e0 > 0.0 { ((et - e0) / e0).abs() } else { 0.0 };
    if drift > 1e-7 {
        return Err(ControlError::ConservationViolated { drift });
    }
    let trace = make_trace(ctx, rows);
    Ok((
        AdjointSummary {
            energy_initial: e0,
            energy_final: et,
            drift,
            final_state,
        },
        trace,
    ))
}

fn make_trace(ctx: &HumContext, rows: Vec<Vec<f64>>) -> ControlTrace {
    let dt = ctx.setup.dt;
    let times = (0..rows.len()).map(|n| (n as f64 + 0.5) * dt).collect();
    let control = rows
        .iter()
        .map(|row| {
            ctx.weights
                .iter()
                .zip(row)
                .map(|(w, v)| w * v)
                .collect::<Vec<f64>>()
        })
        .collect();
    ControlTrace {
        times,
        support: ctx.support.clone(),
        velocities: rows,
        control,
    }
}

/// Observability ratio ∫∫c|ψ_t|² / ‖Φ₀‖² in the tagged norm.
pub fn observability_ratio(phi0: &AdjointData, scenario: &Scenario) -> Result<f64, ControlError> {
    let ctx = HumContext::with_space(scenario, phi0.space);
    observability_ratio_ctx(&ctx, &phi0.state)
}

pub fn observability_ratio_ctx(
    ctx: &HumContext,
    phi0: &StateVector,
) -> Result<f64, ControlError> {
    let norm2 = ctx.inner(phi0, phi0);
    if norm2 <= 0.0 {
        return Err(ControlError::ZeroInitialData);
    }
    let (rows, _) = ctx.record_forward(phi0)?;
    Ok(ctx.observability_integral(&rows) / norm2)
}

/// ΛΦ₀ in the scenario's tagged space.
pub fn apply_gramian(phi0: &AdjointData, scenario: &Scenario) -> Result<AdjointData, ControlError> {
    let ctx = HumContext::with_space(scenario, phi0.space);
    let state = ctx.apply_gramian(&phi0.state)?;
    Ok(AdjointData {
        state,
        space: phi0.space,
    })
}

/// Solves ΛΦ₀ = −U₀ by conjugate gradients in the tagged inner product and
/// synthesizes the control trace from the minimizer's adjoint solve.
pub fn hum_solve(
    u0: &StateVector,
    scenario: &Scenario,
    tol: f64,
) -> Result<GramianReport, ControlError> {
    let ctx = HumContext::new(scenario);
    hum_solve_shifted(
        &ctx,
        u0,
        tol,
        scenario.tolerances.hum_maxiter,
        scenario.tolerances.tikhonov,
    )
}

pub fn hum_solve_ctx(
    ctx: &HumContext,
    u0: &StateVector,
    tol: f64,
    maxiter: usize,
) -> Result<GramianReport, ControlError> {
    hum_solve_shifted(ctx, u0, tol, maxiter, 0.0)
}

/// Inverts Λ + ε·I instead of Λ when `tikhonov` is positive: a diagnostic
/// tool for near-failing geometries. The synthesized control then only
/// approximately cancels U₀, so keep the shift at zero for verified runs.
pub fn hum_solve_shifted(
    ctx: &HumContext,
    u0: &StateVector,
    tol: f64,
    maxiter: usize,
    tikhonov: f64,
) -> Result<GramianReport, ControlError> {
    assert!(tol > 0.0 && tol < 1.0, "tolerance must lie in (0, 1)");
    assert!(tikhonov >= 0.0, "the shift must be nonnegative");
    let rhs: Vec<f64> = u0.to_flat().iter().map(|x| -x).collect();
    let apply = |flat: &[f64]| -> Vec<f64> {
        let phi = StateVector::from_flat(flat);
        let mut out = ctx
            .apply_gramian(&phi)
            .expect("midpoint solve failed inside the Gramian")
            .to_flat();
        if tikhonov > 0.0 {
            for (o, x) in out.iter_mut().zip(flat) {
                *o += tikhonov * x;
            }
        }
        out
    };
    let inner = |x: &[f64], y: &[f64]| -> f64 {
        ctx.inner(&StateVector::from_flat(x), &StateVector::from_flat(y))
    };
    let out = cg_solve(apply, inner, &rhs, tol, maxiter)?;
    let minimizer = StateVector::from_flat(&out.solution);
    let (rows, _) = ctx.record_forward(&minimizer)?;
    let min_norm2 = ctx.inner(&minimizer, &minimizer);
    let obs_ratio = if min_norm2 > 0.0 {
        ctx.observability_integral(&rows) / min_norm2
    } else {
        0.0
    };
    let trace = make_trace(ctx, rows);
    Ok(GramianReport {
        minimizer,
        iterations: out.iterations,
        residual_history: out.residual_history,
        observability_ratio: obs_ratio,
        control: trace,
        terminal_residual: None,
    })
}

/// Simulates the controlled system driven by the synthesized trace and
/// returns ‖(u, u_t, y, y_t)(T)‖ / ‖U₀‖ in the tagged norm.
pub fn verify_control(
    u0: &StateVector,
    control: &ControlTrace,
    scenario: &Scenario,
) -> Result<f64, ControlError> {
    let ctx = HumContext::new(scenario);
    verify_control_ctx(&ctx, u0, control)
}

pub fn verify_control_ctx(
    ctx: &HumContext,
    u0: &StateVector,
    control: &ControlTrace,
) -> Result<f64, ControlError> {
    assert_eq!(
        control.velocities.len(),
        ctx.setup.n_steps,
        "control trace must cover the scenario's time grid"
    );
    assert_eq!(control.support, ctx.support, "control support must match supp(c)");
    let u0_norm = ctx.norm(u0);
    if u0_norm == 0.0 && control.velocities.iter().all(|r| r.iter().all(|&v| v == 0.0)) {
        return Ok(0.0);
    }
    let terminal = ctx.controlled_terminal(u0, &control.velocities)?;
    let denom = if u0_norm > 0.0 { u0_norm } else { 1.0 };
    Ok(ctx.norm(&terminal) / denom)
}

/// Observability floor estimate: minimum ratio over seeded random data plus
/// inverse-power iterates steering toward the worst-observed subspace.
#[derive(Debug, Clone)]
pub struct ObservabilityStudy {
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub n_random: usize,
    pub n_power: usize,
}

pub fn observability_floor(
    scenario: &Scenario,
    seed: u64,
    n_random: usize,
    n_power: usize,
) -> Result<ObservabilityStudy, ControlError> {
    let ctx = HumContext::new(scenario);
    let band = scenario.observability.resolved_band_limit(&scenario.grid_n);
    observability_floor_ctx(&ctx, seed, n_random, n_power, band)
}

/// The floor is estimated over the band-limited class spanned by the first
/// `band_limit` Laplacian modes per axis, with mesh-independent probe
/// coefficients. Raw nodal probes would chase near-Nyquist modes whose group
/// velocity vanishes on the grid; their ratios collapse under refinement and
/// say nothing about the continuum constant.
pub fn observability_floor_ctx(
    ctx: &HumContext,
    seed: u64,
    n_random: usize,
    n_power: usize,
    band_limit: usize,
) -> Result<ObservabilityStudy, ControlError> {
    let n = ctx.setup.grid.len();
    let projector = ModeProjector::new(&ctx.setup.grid, band_limit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(n_random + n_power);
    let mut worst: Option<StateVector> = None;
    let mut worst_ratio = f64::INFINITY;
    for _ in 0..n_random {
        let phi = band_limited_state(n, &projector, &mut rng);
        let r = observability_ratio_ctx(ctx, &phi)?;
        if r < worst_ratio {
            worst_ratio = r;
            worst = Some(phi.clone());
        }
        ratios.push(r);
    }
    // inverse power refinement: approximate Λ⁻¹ applications emphasize the
    // low end of Λ's spectrum; every iterate's ratio is a valid upper bound
    // on the floor, so the CG inside runs a fixed iteration budget and its
    // iterate is used as-is
    if n_power > 0 {
        let mut x = worst.unwrap_or_else(|| band_limited_state(n, &projector, &mut rng));
        let scale = ctx.norm(&x);
        if scale > 0.0 {
            x = x.scaled(1.0 / scale);
        }
        let apply = |flat: &[f64]| -> Vec<f64> {
            ctx.apply_gramian(&StateVector::from_flat(flat))
                .expect("midpoint solve failed inside the Gramian")
                .to_flat()
        };
        let inner = |p: &[f64], q: &[f64]| -> f64 {
            ctx.inner(&StateVector::from_flat(p), &StateVector::from_flat(q))
        };
        for _ in 0..n_power {
            let rhs = x.to_flat();
            let solved = cg_iterate(&apply, &inner, &rhs, INVERSE_POWER_CG_ITERS)?;
            let mut y = StateVector::from_flat(&solved);
            projector.project(&mut y.u);
            projector.project(&mut y.v);
            projector.project(&mut y.y);
            projector.project(&mut y.z);
            let ny = ctx.norm(&y);
            if ny == 0.0 {
                break;
            }
            y = y.scaled(1.0 / ny);
            let r = observability_ratio_ctx(ctx, &y)?;
            ratios.push(r);
            x = y;
        }
    }
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ObservabilityStudy {
        ratios,
        min_ratio,
        n_random,
        n_power,
    })
}

/// CG iteration budget per inverse-power step in `observability_floor`.
const INVERSE_POWER_CG_ITERS: usize = 30;

/// Plain CG for a fixed iteration count; returns the final iterate without a
/// convergence requirement (the inverse-power refinement only needs a crude
/// low-mode filter, not an accurate solve).
fn cg_iterate(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    inner: &dyn Fn(&[f64], &[f64]) -> f64,
    rhs: &[f64],
    iters: usize,
) -> Result<Vec<f64>, SolveError> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = inner(&r, &r);
    if rs == 0.0 {
        return Ok(x);
    }
    for _ in 0..iters {
        let ap = apply(&p);
        let pap = inner(&p, &ap);
        if pap <= 0.0 {
            return Err(SolveError::BreakdownNonSpd);
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = inner(&r, &r);
        if rs_new == 0.0 {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(x)
}

/// State with mesh-independent seeded mode coefficients in every component.
fn band_limited_state(n: usize, projector: &ModeProjector, rng: &mut ChaCha8Rng) -> StateVector {
    let k = projector.mode_count();
    let mut state = StateVector::zeros(n);
    for field in [&mut state.u, &mut state.v, &mut state.y, &mut state.z] {
        let coeffs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        projector.synthesize(&coeffs, field);
    }
    state
}

#[cfg(test)]
fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let mut s = StateVector::zeros(n);
    for i in 0..n {
        s.u[i] = rng.random_range(-1.0..1.0);
    }
    for i in 0..n {
        s.v[i] = rng.random_range(-1.0..1.0);
    }
    for i in 0..n {
        s.y[i] = rng.random_range(-1.0..1.0);
    }
    for i in 0..n {
        s.z[i] = rng.random_range(-1.0..1.0);
    }
    s
}

/// Dense Λ assembled column-by-column from basis vectors; the small-size
/// oracle for the matrix-free path.
pub fn dense_gramian(ctx: &HumContext) -> Result<nalgebra::DMatrix<f64>, ControlError> {
    let n = ctx.setup.grid.len();
    let dim = 4 * n;
    let mut m = nalgebra::DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = ctx.apply_gramian(&StateVector::from_flat(&e))?.to_flat();
        for i in 0..dim {
            m[(i, j)] = col[i];
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn control_scenario(n: usize, horizon: f64) -> Scenario {
        let mut sc = Scenario::default_1d();
        sc.grid_n = vec![n];
        sc.horizon = horizon;
        let delta = (2.2 / (n as f64 + 1.0)).max(0.05);
        sc.coupling.transition = delta;
        sc.damping.transition = delta;
        sc
    }

    #[test]
    fn zero_data_gives_zero_trace_and_rejected_ratio() {
        let sc = control_scenario(40, 1.0);
        let ctx = HumContext::new(&sc);
        let zero = StateVector::zeros(40);
        let (rows, _) = ctx.record_forward(&zero).unwrap();
        assert!(rows.iter().all(|r| r.iter().all(|&v| v == 0.0)));
        assert!(matches!(
            observability_ratio_ctx(&ctx, &zero),
            Err(ControlError::ZeroInitialData)
        ));
    }

    #[test]
    fn adjoint_conserves_energy() {
        let mut sc = control_scenario(80, 3.0);
        sc.seed = Some(11);
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi0 = random_state(80, &mut rng);
        let (summary, _) = solve_adjoint_ctx(&ctx, &phi0).unwrap();
        assert!(summary.drift < 1e-9, "drift {}", summary.drift);
    }

    #[test]
    fn coupling_off_decouples_trace() {
        let mut sc = control_scenario(50, 1.0);
        sc.coupling.plateau = 0.0;
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut phi = random_state(50, &mut rng);
        // zero the ψ components: with b ≡ 0 the trace depends on them alone
        for x in phi.u.iter_mut() {
            *x = 0.0;
        }
        for x in phi.v.iter_mut() {
            *x = 0.0;
        }
        let (rows, _) = ctx.record_forward(&phi).unwrap();
        let integral = ctx.observability_integral(&rows);
        assert!(
            integral < 1e-24,
            "φ components must not leak into the trace: {integral}"
        );
    }

    #[test]
    fn zero_damping_zero_ratio() {
        let mut sc = control_scenario(40, 1.0);
        sc.damping.plateau = 0.0;
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = random_state(40, &mut rng);
        let r = observability_ratio_ctx(&ctx, &phi).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn gramian_linearity_and_zero() {
        let sc = control_scenario(30, 1.0);
        let ctx = HumContext::new(&sc);
        let zero = ctx.apply_gramian(&StateVector::zeros(30)).unwrap();
        assert!(zero.to_flat().iter().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi = random_state(30, &mut rng);
        let l1 = ctx.apply_gramian(&phi).unwrap();
        let l2 = ctx.apply_gramian(&phi.scaled(2.0)).unwrap();
        for (a, b) in l1.to_flat().iter().zip(l2.to_flat()) {
            assert!((2.0 * a - b).abs() <= 1e-10 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn gramian_symmetry_and_quadratic_identity() {
        let sc = control_scenario(40, 1.5);
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..3 {
            let phi = random_state(40, &mut rng);
            let psi = random_state(40, &mut rng);
            let l_phi = ctx.apply_gramian(&phi).unwrap();
            let l_psi = ctx.apply_gramian(&psi).unwrap();
            let s1 = ctx.inner(&l_phi, &psi);
            let s2 = ctx.inner(&l_psi, &phi);
            let scale = ctx.norm(&phi) * ctx.norm(&psi);
            assert!(
                (s1 - s2).abs() <= 1e-8 * scale,
                "symmetry defect {} vs scale {scale}",
                (s1 - s2).abs()
            );
            // quadratic form equals the observability integral
            let (rows, _) = ctx.record_forward(&phi).unwrap();
            let obs = ctx.observability_integral(&rows);
            let quad = ctx.inner(&l_phi, &phi);
            assert!(
                (quad - obs).abs() <= 1e-8 * obs.abs().max(1e-14),
                "quadratic identity defect {}",
                (quad - obs).abs()
            );
        }
    }

    #[test]
    fn weak_space_gramian_symmetry() {
        let mut sc = control_scenario(30, 1.5);
        sc.a = 2.0;
        let ctx = HumContext::new(&sc);
        assert_eq!(ctx.space, SpaceTag::Weak);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let phi = random_state(30, &mut rng);
        let psi = random_state(30, &mut rng);
        let l_phi = ctx.apply_gramian(&phi).unwrap();
        let l_psi = ctx.apply_gramian(&psi).unwrap();
        let s1 = ctx.inner(&l_phi, &psi);
        let s2 = ctx.inner(&l_psi, &phi);
        let scale = ctx.norm(&phi) * ctx.norm(&psi);
        assert!((s1 - s2).abs() <= 1e-8 * scale);
        let (rows, _) = ctx.record_forward(&phi).unwrap();
        let obs = ctx.observability_integral(&rows);
        let quad = ctx.inner(&l_phi, &phi);
        assert!((quad - obs).abs() <= 1e-8 * obs.max(1e-14));
    }

    #[test]
    fn strong_adjoint_matches_transposed_route() {
        // adjoint consistency: the negated-dt retrograde pass must agree with
        // the Gram-conjugated transpose pass
        let sc = control_scenario(24, 0.8);
        let ctx_strong = HumContext::new(&sc);
        let mut ctx_via_transpose = HumContext::new(&sc);
        ctx_via_transpose.space = SpaceTag::Weak; // forces the transpose path
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let phi = random_state(24, &mut rng);
        let (rows, _) = ctx_strong.record_forward(&phi).unwrap();
        let via_inverse = ctx_strong.adjoint_accumulate(&rows).unwrap();
        // manual strong-space accumulation through the transpose route:
        // G_H⁻¹ Σ (Sᵀ)ⁿ(I+Sᵀ) (h^d dt/2) P_vᵀ(c·ρ_n)
        let setup = &ctx_strong.setup;
        let n = setup.grid.len();
        let core_t = StepperCore::new(&setup.lap, &setup.coeffs, setup.dt, StepMode::WeakAdjoint);
        let hd = setup.grid.cell_volume();
        let mut w = StateVector::zeros(n);
        for row in rows.iter().rev() {
            let mut src = vec![0.0; n];
            for ((&i, &wt), &v) in ctx_strong
                .support
                .iter()
                .zip(&ctx_strong.weights)
                .zip(row)
            {
                src[i] = wt * v;
            }
            for i in 0..n {
                w.v[i] += 0.5 * setup.dt * hd * src[i];
            }
            w = core_t.advance(&w, None).map(|(s, _)| s).unwrap();
            for i in 0..n {
                w.v[i] += 0.5 * setup.dt * hd * src[i];
            }
        }
        // strong Gram inverse: h^{-d}((aL)⁻¹ w_u, w_v, (L)⁻¹ w_y, w_z)
        let a = setup.coeffs.a;
        let via_transpose = StateVector {
            u: setup
                .poisson
                .solve(&w.u)
                .iter()
                .map(|t| t / (a * hd))
                .collect(),
            v: w.v.iter().map(|t| t / hd).collect(),
            y: setup.poisson.solve(&w.y).iter().map(|t| t / hd).collect(),
            z: w.z.iter().map(|t| t / hd).collect(),
        };
        let diff: f64 = via_inverse
            .to_flat()
            .iter()
            .zip(via_transpose.to_flat())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale = dot(&via_inverse.to_flat(), &via_inverse.to_flat()).sqrt();
        assert!(diff <= 1e-9 * scale.max(1e-12), "routes diverge: {diff} vs {scale}");
    }

    #[test]
    fn hum_zero_target_zero_control() {
        let sc = control_scenario(30, 1.0);
        let report = hum_solve(&StateVector::zeros(30), &sc, 1e-10).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.minimizer.to_flat().iter().all(|&x| x == 0.0));
        let res = verify_control(&StateVector::zeros(30), &report.control, &sc).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn closed_loop_small_case() {
        let mut sc = control_scenario(40, 3.0);
        sc.seed = Some(5);
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u0 = random_state(40, &mut rng);
        let report = hum_solve_ctx(&ctx, &u0, 1e-10, 600).unwrap();
        let res = verify_control_ctx(&ctx, &u0, &report.control).unwrap();
        assert!(res <= 1e-6, "terminal residual {res}");
    }

    #[test]
    fn scaling_equivariance() {
        let mut sc = control_scenario(30, 2.0);
        sc.seed = Some(2);
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u0 = random_state(30, &mut rng);
        let r1 = hum_solve_ctx(&ctx, &u0, 1e-11, 600).unwrap();
        let r2 = hum_solve_ctx(&ctx, &u0.scaled(2.0), 1e-11, 600).unwrap();
        let m1 = r1.minimizer.to_flat();
        let m2 = r2.minimizer.to_flat();
        let scale = ctx.norm(&r1.minimizer).max(1e-12);
        for (a, b) in m1.iter().zip(&m2) {
            assert!((2.0 * a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn control_from_wrong_target_leaves_residual() {
        let mut sc = control_scenario(40, 3.0);
        sc.seed = Some(31);
        let ctx = HumContext::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let u0 = random_state(40, &mut rng);
        let other = random_state(40, &mut rng);
        let report = hum_solve_ctx(&ctx, &other, 1e-10, 600).unwrap();
        let res = verify_control_ctx(&ctx, &u0, &report.control).unwrap();
        assert!(res > 1e-3, "mismatched control should not cancel U₀: {res}");
    }
}
