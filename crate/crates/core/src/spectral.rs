//! Dense generators of the coupled system in the strong and weak inner
//! products, eigenvalue computations, and resolvent-norm scans along the
//! imaginary axis.
//!
//! Operator norms are always taken in the tagged Gram inner product: with
//! G = LLᵀ the norm of (iβI − 𝒜_h)⁻¹ equals 1/σ_min(iβI − B) for the
//! symmetrized B = Lᵀ𝒜_h L⁻ᵀ. B is reduced to Hessenberg form once; each β
//! then costs one complex Givens QR plus an inverse iteration, both O(n²).
//!
//! Finite-dimensional scans cannot certify uniform-in-h resolvent bounds; the
//! artifact's contract is a two-resolution stability comparison.

use crate::discretization::{Grid, SparseOperator};
use crate::dynamics::SystemCoefficients;
use nalgebra::{Complex, DMatrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("generator dimension {dim} exceeds the dense cap {cap}")]
    SizeCap { dim: usize, cap: usize },
    #[error("eigenvalue solver failed: {0}")]
    Solver(String),
    #[error("iβ lies on the discrete spectrum at β = {beta}")]
    OnSpectrum { beta: f64 },
}

/// Which inner product the generator is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    /// (H¹₀ × L²)² with the a-weighted gradient block.
    Strong,
    /// H¹₀ × L² × L² × H⁻¹: the second wave a Sobolev level down.
    Weak,
}

/// Dense cap on the generator dimension 4N for eigen-solves and scans.
pub const DENSE_CAP: usize = 10_000;

/// Dense realization of the generator together with the Gram matrix of the
/// tagged inner product.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub matrix: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub space: SpaceTag,
    pub n_interior: usize,
}

/// Assembles the 4N×4N block generator (v, aΔu − bz − cv, z, Δy + bv) and the
/// Gram matrix of the requested space.
pub fn assemble_generator(
    grid: &Grid,
    coeffs: &SystemCoefficients,
    lap: &SparseOperator,
    space: SpaceTag,
) -> Result<GeneratorMatrix, SpectralError> {
    let n = grid.len();
    let dim = 4 * n;
    if dim > DENSE_CAP {
        return Err(SpectralError::SizeCap {
            dim,
            cap: DENSE_CAP,
        });
    }
    let ld = lap.to_dense();
    let a = coeffs.a;
    let b = &coeffs.b.samples;
    let c = &coeffs.c.samples;

    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..n {
        m[(i, n + i)] = 1.0; // u' = v
        m[(2 * n + i, 3 * n + i)] = 1.0; // y' = z
        m[(n + i, n + i)] = -c[i];
        m[(n + i, 3 * n + i)] = -b[i];
        m[(3 * n + i, n + i)] = b[i];
    }
    for i in 0..n {
        for j in 0..n {
            let l = ld[(i, j)];
            if l != 0.0 {
                m[(n + i, j)] = -a * l; // aΔu
                m[(3 * n + i, 2 * n + j)] = -l; // Δy
            }
        }
    }

    let hd = grid.cell_volume();
    let mut gram = DMatrix::zeros(dim, dim);
    for i in 0..n {
        gram[(n + i, n + i)] = hd;
    }
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = hd * a * ld[(i, j)];
        }
    }
    match space {
        SpaceTag::Strong => {
            for i in 0..n {
                gram[(3 * n + i, 3 * n + i)] = hd;
            }
            for i in 0..n {
                for j in 0..n {
                    gram[(2 * n + i, 2 * n + j)] = hd * ld[(i, j)];
                }
            }
        }
        SpaceTag::Weak => {
            for i in 0..n {
                gram[(2 * n + i, 2 * n + i)] = hd;
            }
            let linv = ld
                .clone()
                .try_inverse()
                .ok_or_else(|| SpectralError::Solver("Laplacian inversion failed".into()))?;
            for i in 0..n {
                for j in 0..n {
                    gram[(3 * n + i, 3 * n + j)] = hd * 0.5 * (linv[(i, j)] + linv[(j, i)]);
                }
            }
        }
    }

    Ok(GeneratorMatrix {
        matrix: m,
        gram,
        space,
        n_interior: n,
    })
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest eigenvalue of the symmetric part of Gram·Matrix; nonpositive
    /// (to roundoff) exactly when the generator is dissipative in the tagged
    /// inner product.
    pub fn dissipativity_defect(&self) -> f64 {
        let ga = &self.gram * &self.matrix;
        let sym = 0.5 * (&ga + ga.transpose());
        let eig = sym.symmetric_eigen();
        eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Prepared scan state: Gram-symmetrized generator in Hessenberg form.
    pub fn resolvent_scanner(&self) -> Result<ResolventScanner, SpectralError> {
        let chol = self
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| SpectralError::Solver("Gram matrix is not positive definite".into()))?;
        let l = chol.l();
        // B = Lᵀ A L⁻ᵀ via  Bᵀ = L⁻¹ (Lᵀ A)ᵀ
        let lt_a = l.transpose() * &self.matrix;
        let bt = l
            .solve_lower_triangular(&lt_a.transpose())
            .ok_or_else(|| SpectralError::Solver("triangular solve failed".into()))?;
        let b = bt.transpose();
        let scale = b.norm() / (b.nrows() as f64).sqrt();
        let hess = b.hessenberg().unpack_h();
        Ok(ResolventScanner {
            hess,
            dim: self.matrix.nrows(),
            scale,
        })
    }
}

/// All eigenvalues of the generator (real Schur form), plus conjugates.
pub fn spectrum(gen: &GeneratorMatrix) -> Result<Vec<Complex<f64>>, SpectralError> {
    let schur = nalgebra::linalg::Schur::try_new(gen.matrix.clone(), 1e-13, 0)
        .ok_or_else(|| SpectralError::Solver("Schur iteration did not converge".into()))?;
    let eigs = schur.complex_eigenvalues();
    Ok(eigs.iter().copied().collect())
}

/// Supremum of eigenvalue real parts.
pub fn spectral_abscissa(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Hessenberg-reduced scan state; one `norm_at` call is O(n²).
#[derive(Debug, Clone)]
pub struct ResolventScanner {
    hess: DMatrix<f64>,
    dim: usize,
    scale: f64,
}

/// Relative floor on QR diagonal magnitudes below which iβ is declared on the
/// spectrum.
const ON_SPECTRUM_TOL: f64 = 1e-11;

impl ResolventScanner {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Gram-norm of (iβI − 𝒜_h)⁻¹ = 1/σ_min(iβI − H), by complex Givens QR of
    /// the Hessenberg matrix and inverse iteration on the normal equations.
    pub fn norm_at(&self, beta: f64) -> Result<f64, SpectralError> {
        let n = self.dim;
        // column-major complex storage of M = iβI − H
        let mut m: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n * n];
        for j in 0..n {
            for i in 0..(j + 2).min(n) {
                m[j * n + i] = Complex::new(-self.hess[(i, j)], 0.0);
            }
            m[j * n + j] += Complex::new(0.0, beta);
        }

        // Givens QR: rotations zero the subdiagonal in place.
        let mut rot: Vec<(Complex<f64>, Complex<f64>)> = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let a = m[j * n + j];
            let b = m[j * n + j + 1];
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            if r == 0.0 {
                return Err(SpectralError::OnSpectrum { beta });
            }
            let ca = a.conj() / r;
            let cb = b.conj() / r;
            rot.push((ca, cb));
            for k in j..n {
                let x = m[k * n + j];
                let y = m[k * n + j + 1];
                m[k * n + j] = ca * x + cb * y;
                m[k * n + j + 1] = -cb.conj() * x + ca.conj() * y;
            }
        }
        let mut max_diag = 0.0_f64;
        let mut min_diag = f64::INFINITY;
        for j in 0..n {
            let d = m[j * n + j].norm();
            max_diag = max_diag.max(d);
            min_diag = min_diag.min(d);
        }
        if min_diag <= ON_SPECTRUM_TOL * max_diag.max(self.scale) {
            return Err(SpectralError::OnSpectrum { beta });
        }

        // inverse iteration for λ_max((M*M)⁻¹) = 1/σ_min²
        let solve_m = |v: &[Complex<f64>], out: &mut Vec<Complex<f64>>| {
            // M t = v: apply Q* then back-substitute R
            out.clone_from(&v.to_vec());
            for (j, (ca, cb)) in rot.iter().enumerate() {
                let x = out[j];
                let y = out[j + 1];
                out[j] = *ca * x + *cb * y;
                out[j + 1] = -cb.conj() * x + ca.conj() * y;
            }
            for i in (0..n).rev() {
                let mut acc = out[i];
                for k in i + 1..n {
                    acc -= m[k * n + i] * out[k];
                }
                out[i] = acc / m[i * n + i];
            }
        };
        let solve_m_adj = |v: &[Complex<f64>], out: &mut Vec<Complex<f64>>| {
            // M* x = v: forward-substitute R*, then apply Q
            out.clone_from(&v.to_vec());
            for i in 0..n {
                let mut acc = out[i];
                for k in 0..i {
                    acc -= m[i * n + k].conj() * out[k];
                }
                out[i] = acc / m[i * n + i].conj();
            }
            for (j, (ca, cb)) in rot.iter().enumerate().rev() {
                let x = out[j];
                let y = out[j + 1];
                out[j] = ca.conj() * x - *cb * y;
                out[j + 1] = cb.conj() * x + *ca * y;
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ beta.to_bits());
        let mut best = 0.0_f64;
        for _attempt in 0..2 {
            let mut v: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            normalize(&mut v);
            let mut u = vec![Complex::new(0.0, 0.0); n];
            let mut t = vec![Complex::new(0.0, 0.0); n];
            let mut lambda = 0.0_f64;
            let mut converged = false;
            for _it in 0..200 {
                solve_m_adj(&v, &mut u);
                solve_m(&u, &mut t);
                // Rayleigh quotient v*(M*M)⁻¹v = ‖M⁻*v‖²
                let rho: f64 = u.iter().map(|z| z.norm_sqr()).sum();
                if rho.is_nan() || rho.is_infinite() {
                    return Err(SpectralError::OnSpectrum { beta });
                }
                let change = (rho - lambda).abs() / rho.max(f64::MIN_POSITIVE);
                lambda = rho;
                if change < 1e-10 {
                    converged = true;
                    break;
                }
                v.clone_from(&t);
                normalize(&mut v);
            }
            best = best.max(lambda.sqrt());
            if converged {
                break;
            }
        }
        Ok(best)
    }
}

fn normalize(v: &mut [Complex<f64>]) {
    let nrm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nrm > 0.0 {
        for z in v.iter_mut() {
            *z /= nrm;
        }
    }
}

/// Gram-norm of the resolvent at one frequency; errors if iβ is an eigenvalue.
pub fn resolvent_norm(gen: &GeneratorMatrix, beta: f64) -> Result<f64, SpectralError> {
    gen.resolvent_scanner()?.norm_at(beta)
}

/// Resolvent norms on a uniform β grid; on-spectrum points are flagged and
/// skipped rather than failing the scan.
#[derive(Debug, Clone)]
pub struct ResolventCurve {
    pub betas: Vec<f64>,
    /// NaN at flagged points.
    pub norms: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Supremum over unflagged grid points.
    pub sup: f64,
}

pub fn resolvent_scan(
    gen: &GeneratorMatrix,
    beta_max: f64,
    n_points: usize,
) -> Result<ResolventCurve, SpectralError> {
    resolvent_scan_jobs(gen, beta_max, n_points, 1)
}

/// Scan with `jobs` worker threads; points are independent and the output
/// order is fixed by index, so the result does not depend on scheduling.
pub fn resolvent_scan_jobs(
    gen: &GeneratorMatrix,
    beta_max: f64,
    n_points: usize,
    jobs: usize,
) -> Result<ResolventCurve, SpectralError> {
    assert!(n_points >= 2, "need at least two scan points");
    let scanner = gen.resolvent_scanner()?;
    let betas: Vec<f64> = (0..n_points)
        .map(|i| beta_max * i as f64 / (n_points - 1) as f64)
        .collect();
    let mut norms = vec![f64::NAN; n_points];
    let mut flagged = vec![false; n_points];

    let jobs = jobs.max(1).min(n_points);
    if jobs == 1 {
        for (i, &beta) in betas.iter().enumerate() {
            match scanner.norm_at(beta) {
                Ok(v) => norms[i] = v,
                Err(SpectralError::OnSpectrum { .. }) => flagged[i] = true,
                Err(e) => return Err(e),
            }
        }
    } else {
        let results: Vec<Result<f64, SpectralError>> = {
            let mut out: Vec<Result<f64, SpectralError>> = Vec::with_capacity(n_points);
            std::thread::scope(|scope| {
                let chunk = n_points.div_ceil(jobs);
                let handles: Vec<_> = betas
                    .chunks(chunk)
                    .map(|slice| {
                        let scanner = &scanner;
                        scope.spawn(move || {
                            slice
                                .iter()
                                .map(|&b| scanner.norm_at(b))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    out.extend(h.join().expect("scan worker panicked"));
                }
            });
            out
        };
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => norms[i] = v,
                Err(SpectralError::OnSpectrum { .. }) => flagged[i] = true,
                Err(e) => return Err(e),
            }
        }
    }

    let sup = norms
        .iter()
        .filter(|v| !v.is_nan())
        .cloned()
        .fold(0.0, f64::max);
    Ok(ResolventCurve {
        betas,
        norms,
        flagged,
        sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_laplacian, laplacian_eigenvalue};
    use crate::geometry::{build_cutoff, Box2, CoefficientField, Domain, Region};
    use nalgebra::DMatrix;

    fn undamped(n: usize, a: f64) -> (Grid, SparseOperator, SystemCoefficients) {
        let grid = Grid::new(Domain::interval(1.0), &[n]);
        let lap = assemble_laplacian(&grid);
        let coeffs = SystemCoefficients::new(
            a,
            CoefficientField::zero(&grid),
            CoefficientField::zero(&grid),
        );
        (grid, lap, coeffs)
    }

    fn damped_default(n: usize, a: f64) -> (Grid, SparseOperator, SystemCoefficients) {
        let grid = Grid::new(Domain::interval(1.0), &[n]);
        let lap = assemble_laplacian(&grid);
        let delta = (2.2 * grid.h[0]).max(0.05);
        let b = build_cutoff(
            &Region::from_boxes(vec![Box2::interval(0.4, 0.7)]),
            1.0,
            delta,
            &grid,
        )
        .unwrap();
        let c = build_cutoff(
            &Region::from_boxes(vec![Box2::interval(0.3, 0.8)]),
            1.0,
            delta,
            &grid,
        )
        .unwrap();
        (grid, lap, SystemCoefficients::new(a, b, c))
    }

    #[test]
    fn undamped_spectrum_matches_wave_frequencies() {
        let (grid, lap, coeffs) = undamped(24, 2.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let eigs = spectrum(&gen).unwrap();
        // expected: ±i√(aλ_k) and ±i√λ_k
        let mut expected: Vec<f64> = Vec::new();
        for k in 1..=grid.n[0] {
            let lam = laplacian_eigenvalue(&grid, &[k]);
            expected.push((2.0 * lam).sqrt());
            expected.push(lam.sqrt());
        }
        for z in &eigs {
            assert!(z.re.abs() < 1e-8, "skew spectrum must be imaginary, got {z}");
            let freq = z.im.abs();
            let close = expected.iter().any(|f| (f - freq).abs() <= 1e-8 * f);
            assert!(close, "frequency {freq} not in the closed-form set");
        }
        assert!(spectral_abscissa(&eigs).abs() < 1e-8);
    }

    #[test]
    fn spectrum_closed_under_conjugation() {
        let (grid, lap, coeffs) = damped_default(16, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let eigs = spectrum(&gen).unwrap();
        for z in &eigs {
            let mate = eigs
                .iter()
                .any(|w| (w.re - z.re).abs() < 1e-7 && (w.im + z.im).abs() < 1e-7);
            assert!(mate, "no conjugate partner for {z}");
        }
    }

    #[test]
    fn damped_abscissa_is_negative() {
        let (grid, lap, coeffs) = damped_default(30, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let eigs = spectrum(&gen).unwrap();
        assert!(spectral_abscissa(&eigs) < 0.0);
    }

    #[test]
    fn dissipativity_strong_space() {
        let (grid, lap, coeffs) = damped_default(20, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        assert!(gen.dissipativity_defect() <= 1e-10);
        let (grid2, lap2, coeffs2) = damped_default(20, 2.0);
        let gen2 = assemble_generator(&grid2, &coeffs2, &lap2, SpaceTag::Strong).unwrap();
        assert!(gen2.dissipativity_defect() <= 1e-10);
    }

    #[test]
    fn dissipativity_weak_space_without_coupling() {
        let grid = Grid::new(Domain::interval(1.0), &[20]);
        let lap = assemble_laplacian(&grid);
        let c = build_cutoff(
            &Region::from_boxes(vec![Box2::interval(0.3, 0.8)]),
            1.0,
            2.2 * grid.h[0],
            &grid,
        )
        .unwrap();
        let coeffs = SystemCoefficients::new(2.0, CoefficientField::zero(&grid), c);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Weak).unwrap();
        assert!(gen.dissipativity_defect() <= 1e-10);
    }

    #[test]
    fn constant_damping_real_parts() {
        // c ≡ 0.5, b ≡ 0, a = 1: underdamped modes all sit at Re = −0.25
        let grid = Grid::new(Domain::interval(1.0), &[24]);
        let lap = assemble_laplacian(&grid);
        let coeffs = SystemCoefficients::new(
            1.0,
            CoefficientField::zero(&grid),
            CoefficientField::constant(&grid, 0.5),
        );
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let eigs = spectrum(&gen).unwrap();
        // the coupled system block-decouples: the damped wave contributes 2n
        // modes at Re = −c/2 exactly (all underdamped since λ₁ʰ > c²/4), the
        // untouched wave 2n skew modes at Re = 0
        let damped = eigs.iter().filter(|z| (z.re + 0.25).abs() < 1e-6).count();
        let skew = eigs.iter().filter(|z| z.re.abs() < 1e-8).count();
        assert_eq!(damped, 2 * grid.len(), "damped cluster size");
        assert_eq!(skew, 2 * grid.len(), "conservative cluster size");
        // the minimal real part is the damped-wave abscissa −c/2
        let min_re = eigs.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        assert!((min_re + 0.25).abs() < 1e-6);
    }

    #[test]
    fn size_cap_enforced() {
        let grid = Grid::new(Domain::rectangle(1.0, 1.0), &[51, 51]);
        let lap = assemble_laplacian(&grid);
        let coeffs = SystemCoefficients::new(
            1.0,
            CoefficientField::zero(&grid),
            CoefficientField::zero(&grid),
        );
        assert!(matches!(
            assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong),
            Err(SpectralError::SizeCap { .. })
        ));
    }

    #[test]
    fn resolvent_far_field_decay() {
        let (grid, lap, coeffs) = damped_default(16, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let radius = spectrum(&gen)
            .unwrap()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let beta = 20.0 * radius;
        let norm = resolvent_norm(&gen, beta).unwrap();
        let ratio = norm * beta;
        assert!(
            (ratio - 1.0).abs() < 0.1,
            "‖R(iβ)‖·β = {ratio}, expected within 10% of 1"
        );
    }

    #[test]
    fn resolvent_at_zero_matches_dense_oracle() {
        let (grid, lap, coeffs) = damped_default(20, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let norm = resolvent_norm(&gen, 0.0).unwrap();
        // oracle: ‖A⁻¹‖_G = ‖Lᵀ A⁻¹ L⁻ᵀ‖₂ through a dense inverse and SVD
        let ainv = gen.matrix.clone().try_inverse().unwrap();
        let l = gen.gram.clone().cholesky().unwrap().l();
        let lt_ainv = l.transpose() * ainv;
        let sym = l
            .solve_lower_triangular(&lt_ainv.transpose())
            .unwrap()
            .transpose();
        let oracle = sym.svd(false, false).singular_values[0];
        assert!(
            (norm - oracle).abs() / oracle < 1e-6,
            "norm {norm} vs oracle {oracle}"
        );
    }

    #[test]
    fn resolvent_lower_bound_by_spectral_distance() {
        let (grid, lap, coeffs) = damped_default(14, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let eigs = spectrum(&gen).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let beta: f64 = rng.random_range(0.0..80.0);
            let dist = eigs
                .iter()
                .map(|z| (Complex::new(0.0, beta) - z).norm())
                .fold(f64::INFINITY, f64::min);
            let norm = resolvent_norm(&gen, beta).unwrap();
            assert!(
                norm >= (1.0 / dist) * (1.0 - 1e-6),
                "norm {norm} below spectral bound {}",
                1.0 / dist
            );
        }
    }

    #[test]
    fn resolvent_even_in_beta() {
        let (grid, lap, coeffs) = damped_default(14, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let scanner = gen.resolvent_scanner().unwrap();
        for beta in [0.5, 3.0, 17.0] {
            let plus = scanner.norm_at(beta).unwrap();
            let minus = scanner.norm_at(-beta).unwrap();
            assert!((plus - minus).abs() < 1e-6 * plus, "{plus} vs {minus}");
        }
    }

    #[test]
    fn scan_flags_undamped_frequencies() {
        let (grid, lap, coeffs) = undamped(16, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let f1 = laplacian_eigenvalue(&grid, &[1]).sqrt();
        // grid {0, f/2, f, 3f/2, 2f}: the midpoint index lands exactly on f1
        let curve = resolvent_scan(&gen, 2.0 * f1, 5).unwrap();
        assert!(curve.flagged[2], "β = √λ₁ʰ must be flagged");
        assert!(!curve.flagged[1] && !curve.flagged[3]);
        assert!((curve.betas[2] - f1).abs() <= 1e-6 * f1);
        // direct calls at the first few frequencies error out
        let scanner = gen.resolvent_scanner().unwrap();
        for k in 1..=3 {
            let f = laplacian_eigenvalue(&grid, &[k]).sqrt();
            assert!(matches!(
                scanner.norm_at(f),
                Err(SpectralError::OnSpectrum { .. })
            ));
            assert!(scanner.norm_at(f + 0.05).is_ok());
        }
    }

    #[test]
    fn scan_parallel_matches_serial() {
        let (grid, lap, coeffs) = damped_default(16, 1.0);
        let gen = assemble_generator(&grid, &coeffs, &lap, SpaceTag::Strong).unwrap();
        let serial = resolvent_scan(&gen, 40.0, 17).unwrap();
        let parallel = resolvent_scan_jobs(&gen, 40.0, 17, 4).unwrap();
        assert_eq!(serial.flagged, parallel.flagged);
        for (s, p) in serial.norms.iter().zip(&parallel.norms) {
            if !s.is_nan() {
                assert_eq!(s.to_bits(), p.to_bits(), "deterministic per point");
            }
        }
    }

    #[test]
    fn gram_symmetrization_is_an_isometry() {
        // sanity on a small random SPD Gram: norm_at must reproduce the dense
        // Gram-norm definition exactly
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let gram = &raw * raw.transpose() + DMatrix::identity(n, n) * (n as f64);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let gen = GeneratorMatrix {
            matrix: a.clone(),
            gram: gram.clone(),
            space: SpaceTag::Strong,
            n_interior: n / 4,
        };
        let norm = resolvent_norm(&gen, 0.37).unwrap();
        // oracle on the same definition, computed densely
        let m = DMatrix::from_fn(n, n, |i, j| {
            Complex::new(-a[(i, j)], if i == j { 0.37 } else { 0.0 })
        });
        let minv = m.try_inverse().unwrap();
        let l = gram.cholesky().unwrap().l().map(|x| Complex::new(x, 0.0));
        let lt = l.transpose();
        let linv_t = l
            .clone()
            .try_inverse()
            .unwrap()
            .transpose();
        let sym = &lt * minv * linv_t;
        let oracle = sym.svd(false, false).singular_values[0];
        assert!((norm - oracle).abs() < 1e-7 * oracle, "{norm} vs {oracle}");
    }
}
