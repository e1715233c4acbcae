//! Evolution of correlation matrices.
//!
//! Per wavevector, all equal-time connected two-point functions sit in the
//! `2R x 2R` Hermitian matrix `σ(k,t)` (symmetrised spinor correlators in the
//! canonical Φ basis). Writing `σ_s = σ − I/2`, the non-Hermitian evolution
//! closes into the matrix Riccati equation
//!
//! ```text
//! ∂_t σ_s = i C X σ_s − i σ_s X C − 2 σ_s Y σ_s − {σ_s, Y}
//! ```
//!
//! with `Z(k) = X − iY` the triangularised generator; `σ = I/2` is the
//! steady state. The module provides a fixed-step RK4 integrator for the
//! full flow, the closed-form solution of the diagonal (slow-mode)
//! approximation, the quasiparticle density decay law, and binary snapshot
//! I/O for correlation fields.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use rayon::prelude::*;

use crate::bloch::{BandCurves, CanonicalForm};
use crate::linalg::{self, dagger, half_coth, half_csch, signature_matrix};
use crate::{C64, Error, Result};

/// Correlation matrices over the mesh representatives at one time.
///
/// Only `k ≥ 0` representatives are stored: `σ(−k)` is determined by
/// `σ(−k) = S σ(k)ᵀ S` with `S` the block swap, which the covariance
/// assembly applies when it needs the full mesh.
#[derive(Debug, Clone)]
pub struct CorrelationField {
    /// Time the field refers to.
    pub t: f64,
    /// One `2R x 2R` matrix per entry of `BandCurves::forms` (same order).
    pub sigmas: Vec<Array2<C64>>,
}

impl CorrelationField {
    /// Steady-state field `σ = I/2` on every representative.
    pub fn steady_state(curves: &BandCurves) -> Self {
        let n = 2 * curves.r;
        let eye = Array2::<C64>::eye(n).mapv(|z| 0.5 * z);
        CorrelationField { t: 0.0, sigmas: vec![eye; curves.forms.len()] }
    }

    /// Max Hermiticity deviation over the field.
    pub fn hermiticity(&self) -> f64 {
        self.sigmas.iter().map(linalg::hermiticity_drift).fold(0.0, f64::max)
    }
}

/// Spinor-basis initial correlations of the site-factorised Gaussian state
/// with local frequency `omega0`; independent of `k`.
pub fn initial_sigma_psi(r: usize, omega0: f64) -> Array2<C64> {
    let c_plus = 0.5 * (0.5 / omega0 + 0.5 * omega0);
    let c_minus = 0.5 * (0.5 / omega0 - 0.5 * omega0);
    let mut sig = Array2::<C64>::zeros((2 * r, 2 * r));
    for i in 0..r {
        sig[[i, i]] = C64::from(c_plus);
        sig[[r + i, r + i]] = C64::from(c_plus);
        sig[[i, r + i]] = C64::from(c_minus);
        sig[[r + i, i]] = C64::from(c_minus);
    }
    sig
}

/// Initial Φ-basis correlation field for the product ground state:
/// `σ_Φ = W⁻¹ σ_Ψ W⁻†` per representative.
pub fn initial_field(curves: &BandCurves, omega0: f64) -> CorrelationField {
    let sig_psi = initial_sigma_psi(curves.r, omega0);
    let sigmas = curves
        .forms
        .iter()
        .map(|(_, form)| form.w_inv.dot(&sig_psi).dot(&dagger(&form.w_inv)))
        .collect();
    CorrelationField { t: 0.0, sigmas }
}

/// Riccati right-hand side `i C X σ_s − i σ_s X C − 2 σ_s Y σ_s − {σ_s, Y}`.
pub fn riccati_rhs(
    sigma_s: &Array2<C64>,
    x: &Array2<C64>,
    y: &Array2<C64>,
    c: &Array2<C64>,
) -> Array2<C64> {
    let i = C64::new(0.0, 1.0);
    let cx = c.dot(x);
    let xc = x.dot(c);
    let sy = sigma_s.dot(y);
    let ys = y.dot(sigma_s);
    cx.dot(sigma_s).mapv(|v| i * v) - sigma_s.dot(&xc).mapv(|v| i * v)
        - sy.dot(sigma_s).mapv(|v| 2.0 * v)
        - sy
        - ys
}

/// Integration controls.
#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Step size; `None` selects `min(0.02, 0.05 / max(‖X‖, ‖Y‖))`.
    pub dt: Option<f64>,
    /// Re-run at `dt/2` and report the max deviation as an error estimate.
    pub verify_halved_dt: bool,
    /// Check the uncertainty relation `σ ∓ C/2 ⪰ −1e-8` at output times.
    pub check_physicality: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { dt: None, verify_halved_dt: true, check_physicality: true }
    }
}

/// Integrator diagnostics.
#[derive(Debug, Clone)]
pub struct RiccatiDiagnostics {
    /// Step actually used.
    pub dt: f64,
    /// Max deviation between the `dt` and `dt/2` runs (0 when not verified).
    pub error_estimate: f64,
    /// Max per-unit-time Hermiticity drift observed before re-symmetrisation.
    pub hermiticity_drift_rate: f64,
}

/// Stability-motivated step bound `0.05 / max(‖X‖∞, ‖Y‖∞)` over the mesh.
pub fn dt_max(curves: &BandCurves) -> f64 {
    let mut norm: f64 = 0.0;
    for (_, form) in &curves.forms {
        norm = norm.max(inf_norm(&form.x)).max(inf_norm(&form.y));
    }
    0.05 / norm.max(1e-12)
}

fn inf_norm(a: &Array2<C64>) -> f64 {
    let mut best: f64 = 0.0;
    for row in a.rows() {
        let s: f64 = row.iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Integrate the full Riccati flow from `initial` (at `initial.t`) over
/// `t_grid`, returning one field per grid time.
///
/// Classic fixed-step RK4 per wavevector block with per-step Hermitian
/// re-symmetrisation `σ ← (σ + σ†)/2`. Blocks evolve independently and in
/// parallel; outputs are gathered in fixed representative order.
pub fn integrate_riccati(
    curves: &BandCurves,
    initial: &CorrelationField,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<CorrelationField>, RiccatiDiagnostics)> {
    let bound = dt_max(curves);
    let dt = match opts.dt {
        Some(h) => {
            if h > bound * (1.0 + 1e-12) {
                return Err(Error::StepSizeTooLarge(format!(
                    "dt = {h} exceeds stability bound {bound:.3e}"
                )));
            }
            h
        }
        None => bound.min(0.02),
    };

    let (fields, drift) = run_all_blocks(curves, initial, t_grid, dt, opts.check_physicality)?;
    let mut error_estimate = 0.0;
    if opts.verify_halved_dt {
        let (fields_half, _) = run_all_blocks(curves, initial, t_grid, 0.5 * dt, false)?;
        for (a, b) in fields.iter().zip(fields_half.iter()) {
            for (sa, sb) in a.sigmas.iter().zip(b.sigmas.iter()) {
                error_estimate = f64::max(error_estimate, linalg::max_abs(&(sa - sb)));
            }
        }
    }
    if drift > 1e-8 {
        return Err(Error::StepSizeTooLarge(format!(
            "hermiticity drift rate {drift:.3e} per unit time exceeds 1e-8"
        )));
    }
    Ok((fields, RiccatiDiagnostics { dt, error_estimate, hermiticity_drift_rate: drift }))
}

fn run_all_blocks(
    curves: &BandCurves,
    initial: &CorrelationField,
    t_grid: &[f64],
    dt: f64,
    check_physicality: bool,
) -> Result<(Vec<CorrelationField>, f64)> {
    assert_eq!(initial.sigmas.len(), curves.forms.len(), "field/mesh mismatch");
    let per_block: Vec<Result<(Vec<Array2<C64>>, f64)>> = curves
        .forms
        .par_iter()
        .zip(initial.sigmas.par_iter())
        .map(|((_, form), sigma0)| {
            evolve_block(form, sigma0, initial.t, t_grid, dt, check_physicality)
        })
        .collect();
    let mut fields: Vec<CorrelationField> = t_grid
        .iter()
        .map(|&t| CorrelationField { t, sigmas: Vec::with_capacity(curves.forms.len()) })
        .collect();
    let mut drift: f64 = 0.0;
    for res in per_block {
        let (snaps, d) = res?;
        drift = drift.max(d);
        for (i, s) in snaps.into_iter().enumerate() {
            fields[i].sigmas.push(s);
        }
    }
    Ok((fields, drift))
}

/// Evolve a single wavevector block across the output grid.
fn evolve_block(
    form: &CanonicalForm,
    sigma0: &Array2<C64>,
    t0: f64,
    t_grid: &[f64],
    dt: f64,
    check_physicality: bool,
) -> Result<(Vec<Array2<C64>>, f64)> {
    let n = 2 * form.r;
    let mut ws = RhsWorkspace::new(n, &form.x, &form.y);
    let mut sigma_s = sigma0.clone();
    for i in 0..n {
        sigma_s[[i, i]] -= C64::from(0.5);
    }
    let mut out = Vec::with_capacity(t_grid.len());
    let mut drift_rate: f64 = 0.0;
    let mut t = t0;
    for &target in t_grid {
        if target < t - 1e-12 {
            return Err(Error::InvalidConfig {
                field: "t_grid",
                reason: "output times must be ascending and >= initial time".into(),
            });
        }
        let span = target - t;
        if span > 1e-14 {
            let n_sub = (span / dt).ceil().max(1.0) as usize;
            let h = span / n_sub as f64;
            for _ in 0..n_sub {
                ws.rk4_step(&mut sigma_s, h);
                let d = hermitize(&mut sigma_s);
                drift_rate = drift_rate.max(d / h);
            }
        }
        t = target;
        let mut sigma = sigma_s.clone();
        for i in 0..n {
            sigma[[i, i]] += C64::from(0.5);
        }
        if check_physicality {
            check_uncertainty(&sigma, form.r, form.k)?;
        }
        out.push(sigma);
    }
    Ok((out, drift_rate))
}

/// Uncertainty relation in spinor form: both `σ − C/2` and `σ + C/2` must be
/// positive semidefinite (up to `−1e-8`).
fn check_uncertainty(sigma: &Array2<C64>, r: usize, k: f64) -> Result<()> {
    let c = signature_matrix(r);
    for sign in [-0.5, 0.5] {
        let m = sigma + &c.mapv(|z| sign * z);
        let (vals, _) = m.eigh(UPLO::Lower)?;
        if let Some(min) = vals.iter().cloned().reduce(f64::min) {
            if min < -1e-8 {
                return Err(Error::NonphysicalState(format!(
                    "uncertainty violation {min:.3e} at k = {k}"
                )));
            }
        }
    }
    Ok(())
}

/// In-place Hermitian symmetrisation; returns the max deviation removed.
fn hermitize(a: &mut Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut drift: f64 = 0.0;
    for i in 0..n {
        drift = drift.max(a[[i, i]].im.abs());
        a[[i, i]] = C64::from(a[[i, i]].re);
        for j in (i + 1)..n {
            let u = a[[i, j]];
            let v = a[[j, i]].conj();
            drift = drift.max(0.5 * (u - v).norm());
            let avg = 0.5 * (u + v);
            a[[i, j]] = avg;
            a[[j, i]] = avg.conj();
        }
    }
    drift
}

/// Preallocated RK4 workspace; the generator matrices are fixed per block.
struct RhsWorkspace {
    n: usize,
    cx: Array2<C64>,
    xc: Array2<C64>,
    y: Array2<C64>,
    k1: Array2<C64>,
    k2: Array2<C64>,
    k3: Array2<C64>,
    k4: Array2<C64>,
    stage: Array2<C64>,
    sy: Array2<C64>,
    sys: Array2<C64>,
}

impl RhsWorkspace {
    fn new(n: usize, x: &Array2<C64>, y: &Array2<C64>) -> Self {
        let r = n / 2;
        let c = signature_matrix(r);
        RhsWorkspace {
            n,
            cx: c.dot(x),
            xc: x.dot(&c),
            y: y.clone(),
            k1: Array2::zeros((n, n)),
            k2: Array2::zeros((n, n)),
            k3: Array2::zeros((n, n)),
            k4: Array2::zeros((n, n)),
            stage: Array2::zeros((n, n)),
            sy: Array2::zeros((n, n)),
            sys: Array2::zeros((n, n)),
        }
    }

    /// `k_slot = i(CX s − s XC) − 2 sYs − sY − Ys`
    fn rhs_into(&mut self, s: &Array2<C64>, slot: usize) {
        let n = self.n;
        let i_unit = C64::new(0.0, 1.0);
        mul_into(s, &self.y, &mut self.sy);
        mul_into(&self.sy, s, &mut self.sys);
        let out = match slot {
            1 => &mut self.k1,
            2 => &mut self.k2,
            3 => &mut self.k3,
            _ => &mut self.k4,
        };
        for a in 0..n {
            for b in 0..n {
                let mut comm = C64::new(0.0, 0.0);
                let mut ys = C64::new(0.0, 0.0);
                for p in 0..n {
                    comm += self.cx[[a, p]] * s[[p, b]] - s[[a, p]] * self.xc[[p, b]];
                    ys += self.y[[a, p]] * s[[p, b]];
                }
                out[[a, b]] =
                    i_unit * comm - 2.0 * self.sys[[a, b]] - self.sy[[a, b]] - ys;
            }
        }
    }

    fn rk4_step(&mut self, sigma: &mut Array2<C64>, h: f64) {
        let n = self.n;
        self.rhs_into(sigma, 1);
        for a in 0..n {
            for b in 0..n {
                self.stage[[a, b]] = sigma[[a, b]] + 0.5 * h * self.k1[[a, b]];
            }
        }
        let stage = std::mem::replace(&mut self.stage, Array2::zeros((n, n)));
        self.rhs_into(&stage, 2);
        self.stage = stage;
        for a in 0..n {
            for b in 0..n {
                self.stage[[a, b]] = sigma[[a, b]] + 0.5 * h * self.k2[[a, b]];
            }
        }
        let stage = std::mem::replace(&mut self.stage, Array2::zeros((n, n)));
        self.rhs_into(&stage, 3);
        self.stage = stage;
        for a in 0..n {
            for b in 0..n {
                self.stage[[a, b]] = sigma[[a, b]] + h * self.k3[[a, b]];
            }
        }
        let stage = std::mem::replace(&mut self.stage, Array2::zeros((n, n)));
        self.rhs_into(&stage, 4);
        self.stage = stage;
        for a in 0..n {
            for b in 0..n {
                sigma[[a, b]] += h / 6.0
                    * (self.k1[[a, b]]
                        + 2.0 * self.k2[[a, b]]
                        + 2.0 * self.k3[[a, b]]
                        + self.k4[[a, b]]);
            }
        }
    }
}

fn mul_into(a: &Array2<C64>, b: &Array2<C64>, out: &mut Array2<C64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for p in 0..n {
                acc += a[[i, p]] * b[[p, j]];
            }
            out[[i, j]] = acc;
        }
    }
}

/// Slow-mode (gapless, diagonal) generator data at one wavevector:
/// `ε − iΛ = diag(E_1(k)…E_{R−1}(k), E_1(−k)…E_{R−1}(−k))`.
#[derive(Debug, Clone)]
pub struct SlowModeGenerator {
    /// Phase frequencies `ε` (length `2(R−1)`).
    pub epsilon: Vec<f64>,
    /// Decay rates `Λ ≥ 0` (length `2(R−1)`).
    pub lambda: Vec<f64>,
}

/// Extract the slow-mode generator from a canonical form, dropping the
/// gapped band (label 0 on each half).
pub fn slow_mode_generator(form: &CanonicalForm) -> Result<SlowModeGenerator> {
    let r = form.r;
    let mut epsilon = Vec::with_capacity(2 * (r.saturating_sub(1)));
    let mut lambda = Vec::with_capacity(2 * (r.saturating_sub(1)));
    for half in 0..2 {
        for j in 1..r {
            let e = form.z[[half * r + j, half * r + j]];
            let lam = -e.im;
            if lam < -1e-10 {
                return Err(Error::NonphysicalState(format!(
                    "gapless decay rate {lam:.3e} negative at k = {}",
                    form.k
                )));
            }
            epsilon.push(e.re);
            lambda.push(lam.max(0.0));
        }
    }
    Ok(SlowModeGenerator { epsilon, lambda })
}

/// Drop the gapped band's rows and columns (indices `0` and `R`), returning
/// the `2(R−1)`-dimensional matrix over gapless modes.
pub fn project_gapless(sigma: &Array2<C64>, r: usize) -> Array2<C64> {
    let keep: Vec<usize> = (0..2 * r).filter(|&i| i != 0 && i != r).collect();
    let mut out = Array2::<C64>::zeros((keep.len(), keep.len()));
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[[a, b]] = sigma[[i, j]];
        }
    }
    out
}

/// Inverse of [`project_gapless`]: embed a reduced `σ` into the full spinor
/// space with the gapped band pinned at its steady value `σ = 1/2`.
pub fn embed_gapless(reduced: &Array2<C64>, r: usize) -> Array2<C64> {
    let keep: Vec<usize> = (0..2 * r).filter(|&i| i != 0 && i != r).collect();
    let mut out = Array2::<C64>::zeros((2 * r, 2 * r));
    out[[0, 0]] = C64::from(0.5);
    out[[r, r]] = C64::from(0.5);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            out[[i, j]] = reduced[[a, b]];
        }
    }
    out
}

/// Closed-form solution of the diagonal slow-mode flow for the correlation
/// matrix `σ` (including the `I/2`):
///
/// ```text
/// σ(t) = A − B [ e^{iεCt} σ(0) e^{−iεCt} + A ]⁻¹ B,
/// A = coth(Λt)/2,  B = csch(Λt)/2
/// ```
///
/// Small `Λt` is handled by Laurent-series evaluation of `coth`/`csch`; when
/// every rate is negligible the exact dissipationless limit (pure phase
/// rotation of `σ(0)`, via `coth² − csch² = 1`) is returned.
pub fn slow_mode_exact(
    sigma0: &Array2<C64>,
    gen: &SlowModeGenerator,
    t: f64,
) -> Result<Array2<C64>> {
    let n = sigma0.nrows();
    assert_eq!(gen.epsilon.len(), n);
    assert_eq!(gen.lambda.len(), n);
    let half = n / 2;

    // rotated initial data: entry (a,b) picks up e^{i(c_a ε_a − c_b ε_b) t}
    let mut rotated = sigma0.clone();
    for a in 0..n {
        for b in 0..n {
            let ca = if a < half { 1.0 } else { -1.0 };
            let cb = if b < half { 1.0 } else { -1.0 };
            let phase = (ca * gen.epsilon[a] - cb * gen.epsilon[b]) * t;
            rotated[[a, b]] *= C64::new(0.0, phase).exp();
        }
    }

    let max_rate = gen.lambda.iter().cloned().fold(0.0, f64::max) * t;
    if max_rate < 1e-9 {
        return Ok(rotated);
    }

    // rates indistinguishable from zero are clamped so those modes freeze at
    // their rotated values instead of producing an ill-scaled inverse
    let clamp = 1e-9;
    let mut m = rotated;
    let mut a_diag = vec![0.0; n];
    let mut b_diag = vec![0.0; n];
    for i in 0..n {
        let x = (gen.lambda[i] * t).max(clamp);
        a_diag[i] = half_coth(x);
        b_diag[i] = half_csch(x);
        m[[i, i]] += C64::from(a_diag[i]);
    }
    let inv = linalg::inv(&m).map_err(|_| Error::SingularMatrix { t })?;
    let mut out = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = -C64::from(b_diag[i]) * inv[[i, j]] * b_diag[j];
        }
        out[[i, i]] += C64::from(a_diag[i]);
    }
    Ok(out)
}

/// Quasiparticle density decay under monitoring (for the squeezed product
/// initial state, whose pair correlations satisfy `|⟨bb⟩|² = n(n+1)`):
///
/// ```text
/// n_j(k, t) = n₀ e^{−4 Γ_j k² t} / (1 + n₀ (1 − e^{−4 Γ_j k² t}))
/// ```
pub fn density_decay(n0: f64, gamma_j: f64, k: f64, t: f64) -> f64 {
    logistic_decay(n0, 4.0 * gamma_j * k * k * t)
}

/// Logistic decay with explicit exponent: `n₀e^{−x}/(1 + n₀(1 − e^{−x}))`.
pub fn logistic_decay(n0: f64, exponent: f64) -> f64 {
    let q = (-exponent).exp();
    n0 * q / (1.0 + n0 * (1.0 - q))
}

// ---------------------------------------------------------------------------
// binary snapshots
// ---------------------------------------------------------------------------

/// Magic header of correlation-field snapshot files.
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"MHCSNAP1";

/// Write a correlation field in the documented fixed layout: magic, then
/// little-endian `u64 L`, `u64 R`, `f64 t`, `u64 n_reps`, then per
/// representative `u64 mesh_index`, `f64 k`, followed by the `2R x 2R`
/// Φ-basis matrix row-major as `(re, im)` float64 pairs.
pub fn write_snapshot(
    path: &Path,
    l: usize,
    curves: &BandCurves,
    field: &CorrelationField,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(SNAPSHOT_MAGIC)?;
    f.write_all(&(l as u64).to_le_bytes())?;
    f.write_all(&(curves.r as u64).to_le_bytes())?;
    f.write_all(&field.t.to_le_bytes())?;
    f.write_all(&(field.sigmas.len() as u64).to_le_bytes())?;
    for ((mesh_idx, form), sigma) in curves.forms.iter().zip(field.sigmas.iter()) {
        f.write_all(&(*mesh_idx as u64).to_le_bytes())?;
        f.write_all(&form.k.to_le_bytes())?;
        for i in 0..2 * curves.r {
            for j in 0..2 * curves.r {
                f.write_all(&sigma[[i, j]].re.to_le_bytes())?;
                f.write_all(&sigma[[i, j]].im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Parsed snapshot contents.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub l: usize,
    pub r: usize,
    pub t: f64,
    /// `(mesh index, k)` per representative.
    pub reps: Vec<(usize, f64)>,
    pub sigmas: Vec<Array2<C64>>,
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::SnapshotFormat("bad magic".into()));
    }
    let l = read_u64(&mut f)? as usize;
    let r = read_u64(&mut f)? as usize;
    let t = read_f64(&mut f)?;
    let n_reps = read_u64(&mut f)? as usize;
    if r == 0 || l == 0 || r > l || n_reps > l {
        return Err(Error::SnapshotFormat("implausible header".into()));
    }
    let mut reps = Vec::with_capacity(n_reps);
    let mut sigmas = Vec::with_capacity(n_reps);
    for _ in 0..n_reps {
        let idx = read_u64(&mut f)? as usize;
        let k = read_f64(&mut f)?;
        let mut m = Array2::<C64>::zeros((2 * r, 2 * r));
        for i in 0..2 * r {
            for j in 0..2 * r {
                let re = read_f64(&mut f)?;
                let im = read_f64(&mut f)?;
                m[[i, j]] = C64::new(re, im);
            }
        }
        reps.push((idx, k));
        sigmas.push(m);
    }
    Ok(Snapshot { l, r, t, reps, sigmas })
}

fn read_u64<R: Read>(f: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(f: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{bandstructure, build_block, triangularize};
    use crate::model::{build_model, ChainConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn steady_state_is_stationary() {
        // rhs vanishes at σ_s = 0 and integration keeps σ = I/2 exactly
        let cfg = ChainConfig::new(24, 4, 1.0, 0.8).with_time_grid(10.0, 2.0);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        for (_, form) in &curves.forms {
            let zero = Array2::<C64>::zeros((8, 8));
            let c = signature_matrix(4);
            let rhs = riccati_rhs(&zero, &form.x, &form.y, &c);
            assert!(linalg::max_abs(&rhs) < 1e-12);
        }
        let init = CorrelationField::steady_state(&curves);
        let (fields, _) =
            integrate_riccati(&curves, &init, &cfg.t_grid(), &EvolveOptions::default()).unwrap();
        for f in &fields {
            for s in &f.sigmas {
                let dev = s - &Array2::<C64>::eye(8).mapv(|z| 0.5 * z);
                assert!(linalg::max_abs(&dev) < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_toy_matches_logistic_solution() {
        // 1x1 flow σ̇_s = −2yσ_s² − 2yσ_s has a closed logistic solution
        let y = 0.37;
        let s0 = 0.8;
        let x = array![[C64::from(0.0)]];
        let ymat = array![[C64::from(y)]];
        let c = array![[C64::from(1.0)]];
        let mut s = array![[C64::from(s0)]];
        let dt = 1e-3;
        let steps = 4000;
        for _ in 0..steps {
            let k1 = riccati_rhs(&s, &x, &ymat, &c);
            let k2 = riccati_rhs(&(&s + &k1.mapv(|v| 0.5 * dt * v)), &x, &ymat, &c);
            let k3 = riccati_rhs(&(&s + &k2.mapv(|v| 0.5 * dt * v)), &x, &ymat, &c);
            let k4 = riccati_rhs(&(&s + &k3.mapv(|v| dt * v)), &x, &ymat, &c);
            s = &s
                + &(k1 + k2.mapv(|v| 2.0 * v) + k3.mapv(|v| 2.0 * v) + k4)
                    .mapv(|v| v * dt / 6.0);
        }
        let t = dt * steps as f64;
        let q = (-2.0 * y * t).exp();
        let expect = s0 * q / (1.0 + s0 * (1.0 - q));
        assert_abs_diff_eq!(s[[0, 0]].re, expect, epsilon = 1e-8);
    }

    #[test]
    fn unitary_flow_conserves_signature_trace() {
        // γ = 0: tr(C σ_s) is a constant of motion
        let cfg = ChainConfig::new(24, 3, 1.0, 0.0).with_omega0(2.0).with_time_grid(4.0, 0.5);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let init = initial_field(&curves, 2.0);
        let (fields, _) =
            integrate_riccati(&curves, &init, &cfg.t_grid(), &EvolveOptions::default()).unwrap();
        let c = signature_matrix(3);
        for rep in 0..curves.forms.len() {
            let trace0: C64 = (0..6).map(|i| c[[i, i]] * init.sigmas[rep][[i, i]]).sum();
            for f in &fields {
                let tr: C64 = (0..6).map(|i| c[[i, i]] * f.sigmas[rep][[i, i]]).sum();
                assert!((tr - trace0).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn density_decay_examples() {
        assert_abs_diff_eq!(density_decay(0.0, 0.3, 0.5, 7.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(density_decay(1.3, 0.3, 0.5, 0.0), 1.3, epsilon = 1e-15);
        // exponent ln 2 at n₀ = 1: n = (1/2)/(3/2) = 1/3
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(logistic_decay(1.0, ln2), 1.0 / 3.0, epsilon = 1e-15);
        let gamma_j = 0.11;
        let k = 0.7;
        let t = ln2 / (4.0 * gamma_j * k * k);
        assert_abs_diff_eq!(density_decay(1.0, gamma_j, k, t), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn slow_mode_limits() {
        // Λ → 0: pure phase rotation; t → ∞: steady state I/2
        let s0 = array![
            [C64::new(0.9, 0.0), C64::new(0.2, 0.1)],
            [C64::new(0.2, -0.1), C64::new(0.7, 0.0)]
        ];
        let gen0 = SlowModeGenerator { epsilon: vec![1.3, 2.1], lambda: vec![0.0, 0.0] };
        let out = slow_mode_exact(&s0, &gen0, 2.0).unwrap();
        // C = diag(1, −1): entry (0,1) rotates at ε_0 + ε_1
        let phase = C64::new(0.0, (1.3 + 2.1) * 2.0).exp();
        assert!((out[[0, 0]] - s0[[0, 0]]).norm() < 1e-12);
        assert!((out[[0, 1]] - s0[[0, 1]] * phase).norm() < 1e-12);

        let gen = SlowModeGenerator { epsilon: vec![1.3, 2.1], lambda: vec![0.4, 0.5] };
        let out = slow_mode_exact(&s0, &gen, 200.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 0.5 } else { 0.0 };
                assert!((out[[i, j]] - C64::from(expect)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn squeezed_block_reproduces_density_decay() {
        // a pure two-mode-squeezed block (|⟨bb⟩|² = n(n+1)) decays with the
        // quasiparticle density law, exponent 4Λt
        let n0: f64 = 0.6;
        let a = (n0 * (n0 + 1.0)).sqrt();
        let s0 = array![
            [C64::from(n0 + 0.5), C64::from(a)],
            [C64::from(a), C64::from(n0 + 0.5)]
        ];
        let lam = 0.23;
        let gen = SlowModeGenerator { epsilon: vec![1.7, 1.1], lambda: vec![lam, lam] };
        for &t in &[0.3, 1.0, 3.0, 8.0] {
            let out = slow_mode_exact(&s0, &gen, t).unwrap();
            let n_t = out[[0, 0]].re - 0.5;
            let expect = logistic_decay(n0, 4.0 * lam * t);
            assert_abs_diff_eq!(n_t, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn thermal_block_decays_at_diagonal_rate() {
        // without pair correlations the same flow relaxes with exponent 2Λt
        let n0 = 0.6;
        let s0 = array![
            [C64::from(n0 + 0.5), C64::from(0.0)],
            [C64::from(0.0), C64::from(n0 + 0.5)]
        ];
        let lam = 0.23;
        let gen = SlowModeGenerator { epsilon: vec![1.7, 1.1], lambda: vec![lam, lam] };
        for &t in &[0.5, 2.0, 6.0] {
            let out = slow_mode_exact(&s0, &gen, t).unwrap();
            let n_t = out[[0, 0]].re - 0.5;
            let expect = logistic_decay(n0, 2.0 * lam * t);
            assert_abs_diff_eq!(n_t, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn slow_mode_matches_direct_diagonal_integration() {
        // closed form vs RK4 on the diagonal-approximation flow (same generator)
        let block = build_block(3, 1.0, 0.5, 0.35);
        let form = triangularize(&block).unwrap();
        let gen = slow_mode_generator(&form).unwrap();
        let n = 4; // 2(R−1)
        let sig_psi = initial_sigma_psi(3, 2.0);
        let sig_phi = form.w_inv.dot(&sig_psi).dot(&dagger(&form.w_inv));
        let sigma0_red = project_gapless(&sig_phi, 3);
        // σ_s for the direct integration
        let mut s = sigma0_red.clone();
        for i in 0..n {
            s[[i, i]] -= C64::from(0.5);
        }
        let mut x = Array2::<C64>::zeros((n, n));
        let mut y = Array2::<C64>::zeros((n, n));
        let mut c = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            x[[i, i]] = C64::from(gen.epsilon[i]);
            y[[i, i]] = C64::from(gen.lambda[i]);
            c[[i, i]] = C64::from(if i < n / 2 { 1.0 } else { -1.0 });
        }
        let t_end: f64 = 0.8;
        let dt = 2.0e-4;
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            let k1 = riccati_rhs(&s, &x, &y, &c);
            let k2 = riccati_rhs(&(&s + &k1.mapv(|v| 0.5 * dt * v)), &x, &y, &c);
            let k3 = riccati_rhs(&(&s + &k2.mapv(|v| 0.5 * dt * v)), &x, &y, &c);
            let k4 = riccati_rhs(&(&s + &k3.mapv(|v| dt * v)), &x, &y, &c);
            s = &s
                + &(k1 + k2.mapv(|v| 2.0 * v) + k3.mapv(|v| 2.0 * v) + k4)
                    .mapv(|v| v * dt / 6.0);
        }
        let closed = slow_mode_exact(&sigma0_red, &gen, t_end).unwrap();
        let mut closed_s = closed;
        for i in 0..n {
            closed_s[[i, i]] -= C64::from(0.5);
        }
        let diff = &closed_s - &s;
        assert!(linalg::max_abs(&diff) < 1e-8, "max diff {}", linalg::max_abs(&diff));
    }

    #[test]
    fn project_and_embed_roundtrip() {
        let r = 3;
        let mut sigma = Array2::<C64>::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                sigma[[i, j]] = C64::new(i as f64, j as f64);
            }
        }
        let red = project_gapless(&sigma, r);
        assert_eq!(red.nrows(), 4);
        assert_eq!(red[[0, 0]], sigma[[1, 1]]);
        assert_eq!(red[[2, 3]], sigma[[4, 5]]);
        // R = 1: empty reduction
        let s1 = Array2::<C64>::eye(2);
        assert_eq!(project_gapless(&s1, 1).nrows(), 0);
        let back = embed_gapless(&red, r);
        assert_eq!(back[[1, 1]], sigma[[1, 1]]);
        assert_eq!(back[[0, 0]], C64::from(0.5));
    }

    #[test]
    fn snapshot_roundtrip() {
        let cfg = ChainConfig::new(12, 2, 1.0, 0.4).with_omega0(1.5);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let field = initial_field(&curves, 1.5);
        let dir = std::env::temp_dir().join("mhc_snapshot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.snap");
        write_snapshot(&path, cfg.l, &curves, &field).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.l, 12);
        assert_eq!(snap.r, 2);
        assert_eq!(snap.sigmas.len(), field.sigmas.len());
        for (a, b) in snap.sigmas.iter().zip(field.sigmas.iter()) {
            assert_eq!(linalg::max_abs(&(a - b)), 0.0, "bit-exact roundtrip");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_oversized_step() {
        let cfg = ChainConfig::new(8, 2, 1.0, 0.5);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let init = CorrelationField::steady_state(&curves);
        let opts = EvolveOptions { dt: Some(1.0), ..Default::default() };
        assert!(matches!(
            integrate_riccati(&curves, &init, &[1.0], &opts),
            Err(Error::StepSizeTooLarge(_))
        ));
    }
}
