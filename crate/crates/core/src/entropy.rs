//! Entanglement entropy of subsystems, and the quasiparticle predictions
//! for its growth.
//!
//! The Riccati route: transform the evolved Φ-basis correlations back to the
//! spinor basis (`σ_Ψ = W σ_Φ W†`), inverse-Fourier over the cell index, and
//! convert ladder correlators into the real `(x, p)` covariance of a
//! contiguous region; the entropy follows from its symplectic eigenvalues,
//!
//! ```text
//! S = Σ_ℓ [(ν_ℓ + 1/2) ln(ν_ℓ + 1/2) − (ν_ℓ − 1/2) ln(ν_ℓ − 1/2)].
//! ```
//!
//! The quasiparticle route: counterpropagating pairs with velocities
//! `±v_j(k) = ±R Re ∂_k E_j(k)` transport entropy ballistically while their
//! populations decay at rate `4 Λ_j(k)`, giving
//!
//! ```text
//! S_A(t) = (1/R) Σ_{j>0} ∫ dk/2π · w_j(k,t) · h(n_j(k,t)),
//! h(n) = (n+1) ln(n+1) − n ln n,
//! ```
//!
//! with weight `w = 2|v_j(k)| t` in the infinite system or the recurrence
//! sawtooth `f_j(k,L,t) = min(u, L − u)`, `u = 2|v_j(k)| t mod L`, at finite
//! size. Summing the long-lived small-`k` modes yields `S ∼ √t`; this module
//! also fits that form and produces scaling collapses.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch::{BandCurves, BandExpansion};
use crate::dynamics::{logistic_decay, CorrelationField};
use crate::linalg::{self, dagger, symplectic_eigenvalues};
use crate::model::ChainConfig;
use crate::{C64, Error, Result};

/// Contiguous site interval `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Region {
    pub start: usize,
    pub len: usize,
}

impl Region {
    /// Half chain `[0, L/2)`, shrunk to a whole number of measurement blocks.
    pub fn half_chain(config: &ChainConfig) -> Region {
        let len = (config.l / 2) / config.r * config.r;
        Region { start: 0, len: len.max(config.r) }
    }

    /// The whole chain.
    pub fn full_chain(config: &ChainConfig) -> Region {
        Region { start: 0, len: config.l }
    }
}

/// Real covariance of a region, ordered `(x_1..x_n, p_1..p_n)`.
#[derive(Debug, Clone)]
pub struct CovarianceAssembly {
    pub region: Region,
    /// `2 len x 2 len` real symmetric covariance.
    pub cov: Array2<f64>,
    /// Largest imaginary residue discarded during assembly.
    pub imag_residue: f64,
}

/// Per-cell-separation correlator tables `g[i][j][d]` for one block type.
struct SeparationTable {
    r: usize,
    n_cells: usize,
    data: Vec<C64>,
}

impl SeparationTable {
    fn get(&self, i: usize, j: usize, d: usize) -> C64 {
        self.data[(i * self.r + j) * self.n_cells + d]
    }
}

/// Assemble the real-space covariance of `region` from a Φ-basis correlation
/// field at one time.
///
/// Fails with [`Error::AssemblyInconsistency`] if the imaginary residue of
/// the would-be-real covariance exceeds `1e-8`.
pub fn assemble_covariance(
    curves: &BandCurves,
    field: &CorrelationField,
    region: Region,
) -> Result<CovarianceAssembly> {
    let tables = correlator_tables(curves, field);
    assemble_from_tables(curves, &tables, region)
}

/// Full-chain symplectic spectrum (used by purity checks).
pub fn full_symplectic_spectrum(
    curves: &BandCurves,
    field: &CorrelationField,
    l: usize,
) -> Result<Vec<f64>> {
    let assembly = assemble_covariance(
        curves,
        field,
        Region { start: 0, len: l },
    )?;
    symplectic_eigenvalues(&assembly.cov)
}

struct Tables {
    xx: SeparationTable,
    pp: SeparationTable,
    xp: SeparationTable,
    px: SeparationTable,
}

/// Build `⟨x x⟩`, `⟨p p⟩`, `⟨x p⟩`, `⟨p x⟩` as functions of cell separation.
///
/// For every mesh wavevector the unsymmetrised Fourier-component correlators
/// follow from `σ_Ψ(k)`; the `−k` half of the mesh comes from the stored
/// representatives through `σ_Ψ(−k) = S σ_Ψ(k)ᵀ S`.
fn correlator_tables(curves: &BandCurves, field: &CorrelationField) -> Tables {
    let r = curves.r;
    let n = curves.k.len();
    let mut xx = vec![C64::new(0.0, 0.0); r * r * n];
    let mut pp = vec![C64::new(0.0, 0.0); r * r * n];
    let mut xp = vec![C64::new(0.0, 0.0); r * r * n];
    let mut px = vec![C64::new(0.0, 0.0); r * r * n];

    // mesh-point contributions (k, σ_Ψ(k)) including mirrored reps
    let mut contributions: Vec<(f64, Array2<C64>)> = Vec::with_capacity(n);
    for ((mesh_idx, form), sigma_phi) in curves.forms.iter().zip(field.sigmas.iter()) {
        let sig_psi = form.w.dot(sigma_phi).dot(&dagger(&form.w));
        let k = curves.k[*mesh_idx];
        // mirrored point, when distinct: σ(−k) = S σ(k)ᵀ S
        let kneg = -k;
        let distinct = curves
            .k
            .iter()
            .any(|&km| (km - kneg).abs() < 1e-9 && (km - k).abs() > 1e-9);
        if distinct {
            let mut mirror = Array2::<C64>::zeros((2 * r, 2 * r));
            for a in 0..2 * r {
                for b in 0..2 * r {
                    let sa = (a + r) % (2 * r);
                    let sb = (b + r) % (2 * r);
                    mirror[[a, b]] = sig_psi[[sb, sa]];
                }
            }
            contributions.push((kneg, mirror));
        }
        contributions.push((k, sig_psi));
    }

    let inv_n = 1.0 / n as f64;
    for (k, sig) in &contributions {
        for i in 0..r {
            for j in 0..r {
                // unsymmetrised Fourier correlators from the spinor blocks;
                // the commutator halves cancel in xx and pp and cancel the
                // iδ/2 of the canonical pair in xp/px after assembly
                let s_ji = sig[[j, i]];
                let s_hj_i = sig[[r + j, i]];
                let s_j_hi = sig[[j, r + i]];
                let s_hj_hi = sig[[r + j, r + i]];
                let x_corr = 0.5 * (s_ji + s_hj_i + s_j_hi + s_hj_hi);
                let p_corr = 0.5 * (s_ji + s_hj_hi - s_hj_i - s_j_hi);
                let delta = if i == j { 1.0 } else { 0.0 };
                let xp_corr = C64::new(0.0, -0.5)
                    * (s_hj_i + s_hj_hi - s_ji - s_j_hi - C64::from(delta));
                let px_corr = C64::new(0.0, -0.5)
                    * (s_hj_i + s_ji - s_hj_hi - s_j_hi + C64::from(delta));
                for d in 0..n {
                    let phase = (C64::new(0.0, 1.0) * (*k * d as f64)).exp() * inv_n;
                    let idx = (i * r + j) * n + d;
                    xx[idx] += phase * x_corr;
                    pp[idx] += phase * p_corr;
                    xp[idx] += phase * xp_corr;
                    px[idx] += phase * px_corr;
                }
            }
        }
    }
    Tables {
        xx: SeparationTable { r, n_cells: n, data: xx },
        pp: SeparationTable { r, n_cells: n, data: pp },
        xp: SeparationTable { r, n_cells: n, data: xp },
        px: SeparationTable { r, n_cells: n, data: px },
    }
}

fn assemble_from_tables(
    curves: &BandCurves,
    tables: &Tables,
    region: Region,
) -> Result<CovarianceAssembly> {
    let r = curves.r;
    let n_cells = curves.k.len();
    let l = r * n_cells;
    assert!(region.start + region.len <= l, "region exceeds the chain");
    let len = region.len;
    let mut cov = Array2::<f64>::zeros((2 * len, 2 * len));
    let mut residue: f64 = 0.0;
    for a in 0..len {
        let sa = region.start + a;
        let (ba, ia) = (sa / r, sa % r);
        for b in 0..len {
            let sb = region.start + b;
            let (bb, ib) = (sb / r, sb % r);
            let d = (ba + n_cells - bb) % n_cells;
            let xx = tables.xx.get(ia, ib, d);
            let pp = tables.pp.get(ia, ib, d);
            // the bare ⟨x p⟩ carries the canonical commutator ±i/2, which
            // cancels in the symmetrised combination
            let cross = 0.5 * (tables.xp.get(ia, ib, d) + tables.px.get(ia, ib, d));
            residue =
                residue.max(xx.im.abs()).max(pp.im.abs()).max(cross.im.abs());
            cov[[a, b]] = xx.re;
            cov[[len + a, len + b]] = pp.re;
            cov[[a, len + b]] = cross.re;
            cov[[len + b, a]] = cross.re;
        }
    }
    if residue > 1e-8 {
        return Err(Error::AssemblyInconsistency { residue });
    }
    // enforce exact symmetry (entries were filled pairwise already)
    for i in 0..2 * len {
        for j in (i + 1)..2 * len {
            let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = avg;
            cov[[j, i]] = avg;
        }
    }
    Ok(CovarianceAssembly { region, cov, imag_residue: residue })
}

/// Von Neumann entropy of a Gaussian state from its covariance.
///
/// Symplectic eigenvalues below `1/2 − 1e-6` are rejected as nonphysical;
/// smaller violations are clipped to `1/2` where the entropy contribution
/// vanishes.
pub fn gaussian_entropy(assembly: &CovarianceAssembly) -> Result<f64> {
    let nus = symplectic_eigenvalues(&assembly.cov)?;
    let mut s = 0.0;
    for nu in nus {
        if nu < 0.5 - 1e-6 {
            return Err(Error::NonphysicalCovariance { nu });
        }
        s += entropy_of_mode(nu.max(0.5));
    }
    Ok(s)
}

/// Single-mode entropy `s(ν) = (ν+1/2)ln(ν+1/2) − (ν−1/2)ln(ν−1/2)`.
pub fn entropy_of_mode(nu: f64) -> f64 {
    let plus = nu + 0.5;
    let minus = nu - 0.5;
    let tail = if minus > 0.0 { minus * minus.ln() } else { 0.0 };
    plus * plus.ln() - tail
}

/// Bosonic population entropy `h(n) = (n+1)ln(n+1) − n ln n` (equals
/// `s(n + 1/2)`).
pub fn population_entropy(n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    (n + 1.0) * (n + 1.0).ln() - n * n.ln()
}

/// How an entropy curve was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMethod {
    Riccati,
    Qp,
    QpFinite,
    Asymptotic,
}

impl std::fmt::Display for EntropyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EntropyMethod::Riccati => "riccati",
            EntropyMethod::Qp => "qp",
            EntropyMethod::QpFinite => "qp-finite",
            EntropyMethod::Asymptotic => "asymptotic",
        };
        f.write_str(s)
    }
}

/// Time series of subsystem entropy.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub method: EntropyMethod,
    /// Identifying parameters `(L, R, m, γ, ω₀)` of the run.
    pub params: (usize, usize, f64, f64, f64),
}

/// Entropy of `region` at every field in a Riccati trajectory.
pub fn entropy_trace(
    curves: &BandCurves,
    fields: &[CorrelationField],
    region: Region,
    config: &ChainConfig,
) -> Result<EntropyTrace> {
    let values: Vec<Result<f64>> = fields
        .par_iter()
        .map(|f| gaussian_entropy(&assemble_covariance(curves, f, region)?))
        .collect();
    let mut out = Vec::with_capacity(fields.len());
    for v in values {
        out.push(v?);
    }
    Ok(EntropyTrace {
        times: fields.iter().map(|f| f.t).collect(),
        values: out,
        method: EntropyMethod::Riccati,
        params: (config.l, config.r, config.mass(), config.gamma, config.omega0()),
    })
}

/// Steady-state (area-law) entropy: the exact evaluation at `σ = I/2`.
pub fn steady_state_entropy(curves: &BandCurves, region: Region) -> Result<f64> {
    let field = CorrelationField::steady_state(curves);
    gaussian_entropy(&assemble_covariance(curves, &field, region)?)
}

/// Inputs of the quasiparticle predictions, sampled per gapless band on a
/// wavevector list.
#[derive(Debug, Clone, Serialize)]
pub struct QpInputs {
    pub r: usize,
    /// Sampled wavevectors (either the physical mesh or a fine grid).
    pub k: Vec<f64>,
    /// `|v_j(k)|` in site units, `[band][k]`; bands indexed `1..R−1`.
    pub speed: Vec<Vec<f64>>,
    /// Exact decay rates `Λ_j(k) = −Im E_j(k) ≥ 0`, `[band][k]`.
    pub rate: Vec<Vec<f64>>,
    /// Initial densities `n_j(k, 0)`, `[band][k]`.
    pub density0: Vec<Vec<f64>>,
    /// Small-`k` expansion per gapless band (for the asymptotic coefficient).
    pub expansions: Vec<BandExpansion>,
    /// Conserved charges `ν_j = n_j(0, 0)`.
    pub nu: Vec<f64>,
}

impl QpInputs {
    /// Max sampled quasiparticle speed.
    pub fn v_max(&self) -> f64 {
        self.speed.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Build quasiparticle inputs from labelled band curves for the product
/// initial state with frequency `omega0`.
///
/// The density of band `j` at `+k` (`−k`) is the `j`-th (`R+j`-th) diagonal
/// entry of `σ_Φ(k, 0) − I/2`; negatives from roundoff are clipped.
pub fn qp_inputs(curves: &BandCurves, omega0: f64) -> Result<QpInputs> {
    let r = curves.r;
    if r < 2 {
        // no gapless bands: empty inputs on the mesh
        return Ok(QpInputs {
            r,
            k: curves.k.clone(),
            speed: vec![],
            rate: vec![],
            density0: vec![],
            expansions: vec![],
            nu: vec![],
        });
    }
    let n = curves.k.len();
    let mut speed = vec![vec![0.0; n]; r - 1];
    let mut rate = vec![vec![0.0; n]; r - 1];
    let mut density0 = vec![vec![0.0; n]; r - 1];
    let sig_psi = crate::dynamics::initial_sigma_psi(r, omega0);
    for (mesh_idx, form) in &curves.forms {
        let sig_phi = form.w_inv.dot(&sig_psi).dot(&dagger(&form.w_inv));
        for j in 1..r {
            speed[j - 1][*mesh_idx] = curves.velocity[j][*mesh_idx].abs();
            rate[j - 1][*mesh_idx] = (-curves.energy[j][*mesh_idx].im).max(0.0);
            density0[j - 1][*mesh_idx] = (sig_phi[[j, j]].re - 0.5).max(0.0);
            // mirrored mesh point
            let kneg = -curves.k[*mesh_idx];
            if let Some(nidx) = curves
                .k
                .iter()
                .position(|&km| (km - kneg).abs() < 1e-9)
            {
                if nidx != *mesh_idx {
                    speed[j - 1][nidx] = curves.velocity[j][nidx].abs();
                    rate[j - 1][nidx] = (-curves.energy[j][nidx].im).max(0.0);
                    density0[j - 1][nidx] = (sig_phi[[r + j, r + j]].re - 0.5).max(0.0);
                }
            }
        }
    }
    // expansions and conserved charges
    let zero_idx = curves.k.iter().position(|&k| k.abs() < 1e-12).unwrap();
    let mut expansions = Vec::with_capacity(r - 1);
    let mut nu = Vec::with_capacity(r - 1);
    for j in 1..r {
        nu.push(density0[j - 1][zero_idx]);
    }
    // fit on a fine stencil independent of the mesh
    let m = infer_mass(curves);
    let gamma = infer_gamma(curves);
    let model = crate::model::build_model(&{
        let mut cfg = ChainConfig::new(r * curves.k.len(), r, m, gamma);
        cfg.regularize_zero_mass = true;
        cfg
    })?;
    for j in 1..r {
        expansions.push(crate::bloch::expand_band(&model, j, 0.04, 8)?);
    }
    Ok(QpInputs { r, k: curves.k.clone(), speed, rate, density0, expansions, nu })
}

fn infer_mass(curves: &BandCurves) -> f64 {
    // E_{R−1}(0) = 2 sqrt(4 sin²(π(R−1)/R) + m²) is real and monotone in m
    let zero_idx = curves.k.iter().position(|&k| k.abs() < 1e-12).unwrap();
    let r = curves.r;
    let e = curves.energy[r - 1][zero_idx].re;
    let s = (std::f64::consts::PI * (r as f64 - 1.0) / r as f64).sin();
    ((e * e / 4.0) - 4.0 * s * s).max(0.0).sqrt()
}

fn infer_gamma(curves: &BandCurves) -> f64 {
    // Im E_0(0)² = ... use |Im 2√(m²−iγR)|: γ = |Im(E²/4)| / R
    let zero_idx = curves.k.iter().position(|&k| k.abs() < 1e-12).unwrap();
    let e = curves.energy[0][zero_idx];
    let sq = e * e / 4.0;
    (-sq.im / curves.r as f64).max(0.0)
}

/// Quasiparticle entropy prediction at time `t`.
///
/// `finite_l = Some(L)` switches the ballistic weight `2|v|t` to the
/// finite-size sawtooth `f_j(k, L, t)` and uses the discrete mesh sum; with
/// `None` the infinite-system trapezoid integral is used and refined
/// convergence is checked against the half-resolution estimate.
pub fn qp_entropy(inputs: &QpInputs, t: f64, finite_l: Option<usize>) -> Result<f64> {
    match finite_l {
        Some(l) => Ok(qp_entropy_mesh(inputs, t, l as f64)),
        None => {
            let full = qp_entropy_integral(inputs, t, 1);
            let half = qp_entropy_integral(inputs, t, 2);
            if full.abs() > 1e-12 {
                let change = ((full - half) / full).abs();
                if change > 1e-3 {
                    return Err(Error::QuadratureUnconverged { change });
                }
            }
            Ok(full)
        }
    }
}

fn qp_entropy_integral(inputs: &QpInputs, t: f64, stride: usize) -> f64 {
    // trapezoid over the periodic zone: uniform mesh makes the plain sum exact
    let n = inputs.k.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, speeds) in inputs.speed.iter().enumerate() {
        for idx in (0..n).step_by(stride) {
            let v = speeds[idx];
            let n_t = logistic_decay(inputs.density0[j][idx], 4.0 * inputs.rate[j][idx] * t);
            total += 2.0 * v * t * population_entropy(n_t);
            if j == 0 {
                count += 1;
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    // Σ_k Δk/(2π) = 1/(number of sampled points)
    total / (inputs.r as f64) / (count as f64)
}

fn qp_entropy_mesh(inputs: &QpInputs, t: f64, l: f64) -> f64 {
    let n = inputs.k.len();
    let mut total = 0.0;
    for (j, speeds) in inputs.speed.iter().enumerate() {
        for idx in 0..n {
            let v = speeds[idx];
            let u = (2.0 * v * t).rem_euclid(l);
            let weight = u.min(l - u);
            let n_t = logistic_decay(inputs.density0[j][idx], 4.0 * inputs.rate[j][idx] * t);
            total += weight * population_entropy(n_t);
        }
    }
    total / (inputs.r as f64) / (n as f64)
}

/// Asymptotic sqrt-time coefficient `b = lim S(t)/√t` with per-band
/// decomposition and the inferred carrier function values
/// `g_j = b_j √Γ_j / |v_j|`.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticCoefficient {
    pub total: f64,
    pub per_band: Vec<f64>,
    pub g_values: Vec<f64>,
}

/// Evaluate the sqrt-time coefficient by Richardson extrapolation of
/// `S(t)/√t` on a geometric time ladder.
pub fn asymptotic_coefficient(inputs: &QpInputs) -> Result<AsymptoticCoefficient> {
    let mut per_band = Vec::with_capacity(inputs.speed.len().max(1));
    for j in 0..inputs.speed.len() {
        let single = QpInputs {
            r: inputs.r,
            k: inputs.k.clone(),
            speed: vec![inputs.speed[j].clone()],
            rate: vec![inputs.rate[j].clone()],
            density0: vec![inputs.density0[j].clone()],
            expansions: vec![inputs.expansions[j].clone()],
            nu: vec![inputs.nu[j]],
        };
        per_band.push(extrapolate_sqrt_coefficient(&single)?);
    }
    let total = per_band.iter().sum();
    let g_values = per_band
        .iter()
        .zip(inputs.expansions.iter())
        .map(|(b, e)| {
            let v_site = (inputs.r as f64 * e.velocity).abs();
            if v_site > 1e-12 && e.decay > 0.0 {
                b * e.decay.sqrt() / v_site
            } else {
                0.0
            }
        })
        .collect();
    Ok(AsymptoticCoefficient { total, per_band, g_values })
}

fn extrapolate_sqrt_coefficient(inputs: &QpInputs) -> Result<f64> {
    // all carriers empty -> coefficient 0
    if inputs.speed.is_empty()
        || inputs.density0.iter().all(|band| band.iter().all(|&n| n < 1e-14))
    {
        return Ok(0.0);
    }
    let gamma_min = inputs
        .expansions
        .iter()
        .map(|e| e.decay)
        .fold(f64::INFINITY, f64::min);
    if !(gamma_min > 0.0) {
        return Err(Error::NoConvergence(
            "vanishing decay coefficient: no diffusive asymptotics".into(),
        ));
    }
    // ladder anchored at Γ k²t ≈ 1 for moderate k
    let t0 = 10.0 / gamma_min;
    let n_ladder = 8;
    let mut xs = Vec::with_capacity(n_ladder);
    let mut bs = Vec::with_capacity(n_ladder);
    for i in 0..n_ladder {
        let t = t0 * 2f64.powi(i as i32);
        let s = qp_entropy_integral(inputs, t, 1);
        xs.push(1.0 / t.sqrt());
        bs.push(s / t.sqrt());
    }
    // Neville extrapolation to x = 1/√t → 0
    let mut table = bs.clone();
    let m = table.len();
    for order in 1..m {
        for i in 0..m - order {
            let xi = xs[i];
            let xio = xs[i + order];
            table[i] = ((0.0 - xio) * table[i] - (0.0 - xi) * table[i + 1]) / (xi - xio);
        }
    }
    let extrapolated = table[0];
    // convergence check from the raw ladder tail
    let tail = bs[m - 1];
    let prev = bs[m - 2];
    if extrapolated.abs() > 1e-12 && ((tail - prev) / extrapolated).abs() > 0.01 {
        return Err(Error::NoConvergence(format!(
            "sqrt-coefficient ladder not settled: {prev:.6e} -> {tail:.6e}"
        )));
    }
    Ok(extrapolated)
}

/// Result of the `a + b√t` fit.
#[derive(Debug, Clone, Serialize)]
pub struct SqrtFit {
    pub a: f64,
    pub b: f64,
    pub rmse: f64,
    /// log-log slope of `(S − a)` vs `t` inside the window.
    pub alpha: f64,
    pub window: (f64, f64),
    pub n_samples: usize,
}

/// Least-squares fit `S ≈ a + b√t` over `window = (t_lo, t_hi)`.
pub fn fit_sqrt(trace: &EntropyTrace, window: (f64, f64)) -> Result<SqrtFit> {
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(trace.values.iter())
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, s)| (*t, *s))
        .collect();
    if pts.len() < 20 {
        return Err(Error::WindowTooSmall { n: pts.len(), min: 20 });
    }
    // linear LSQ in the basis {1, √t}
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0.sqrt()).sum();
    let sxx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxy: f64 = pts.iter().map(|p| p.0.sqrt() * p.1).sum();
    let det = n * sxx - sx * sx;
    let a = (sxx * sy - sx * sxy) / det;
    let b = (n * sxy - sx * sy) / det;
    let mut ss = 0.0;
    for (t, s) in &pts {
        let fit = a + b * t.sqrt();
        ss += (s - fit) * (s - fit);
    }
    let rmse = (ss / n).sqrt();
    let alpha = growth_exponent(&pts);
    Ok(SqrtFit { a, b, rmse, alpha, window, n_samples: pts.len() })
}

/// Growth exponent α of `S ≈ a' + c t^α`, i.e. the log-log slope of
/// `(S − a')` vs `t` with the offset estimated jointly: for each trial α the
/// remaining parameters are a linear least-squares problem, and the residual
/// is minimised over a refined α grid.
fn growth_exponent(pts: &[(f64, f64)]) -> f64 {
    let residual = |alpha: f64| -> f64 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0.powf(alpha)).sum();
        let sxx: f64 = pts.iter().map(|p| p.0.powf(2.0 * alpha)).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxy: f64 = pts.iter().map(|p| p.0.powf(alpha) * p.1).sum();
        let det = n * sxx - sx * sx;
        if det.abs() < 1e-300 {
            return f64::INFINITY;
        }
        let a0 = (sxx * sy - sx * sxy) / det;
        let c = (n * sxy - sx * sy) / det;
        pts.iter().map(|(t, s)| (s - a0 - c * t.powf(alpha)).powi(2)).sum()
    };
    let mut best = 0.5;
    let mut best_res = f64::INFINITY;
    let mut lo = 0.05;
    let mut hi = 1.5;
    let mut step = 0.025;
    for _ in 0..3 {
        let mut alpha = lo;
        while alpha <= hi + 1e-12 {
            let r = residual(alpha);
            if r < best_res {
                best_res = r;
                best = alpha;
            }
            alpha += step;
        }
        lo = (best - step).max(0.01);
        hi = best + step;
        step /= 10.0;
    }
    best
}

/// A collapsed set of entropy curves: every trace is shifted and rescaled to
/// `(S − a)/b` on a common time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Collapse {
    pub t_grid: Vec<f64>,
    /// One rescaled curve per input trace.
    pub rescaled: Vec<Vec<f64>>,
    /// Max pairwise L2 distance between rescaled curves on the grid.
    pub metric: f64,
    /// L2 norm of the mean rescaled curve (for relative quality).
    pub curve_norm: f64,
}

/// Rescale traces by their fitted `(a, b)` and measure collapse quality on
/// the overlap of the fit windows.
pub fn scaling_collapse(
    traces: &[EntropyTrace],
    fits: &[SqrtFit],
    n_grid: usize,
) -> Result<Collapse> {
    assert_eq!(traces.len(), fits.len());
    assert!(!traces.is_empty());
    let t_lo = fits.iter().map(|f| f.window.0).fold(f64::MIN, f64::max);
    let t_hi = fits.iter().map(|f| f.window.1).fold(f64::MAX, f64::min);
    if !(t_hi > t_lo) {
        return Err(Error::WindowTooSmall { n: 0, min: 2 });
    }
    let t_grid: Vec<f64> = (0..n_grid)
        .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let mut rescaled = Vec::with_capacity(traces.len());
    for (trace, fit) in traces.iter().zip(fits.iter()) {
        let curve: Vec<f64> = t_grid
            .iter()
            .map(|&t| (interp_linear(&trace.times, &trace.values, t) - fit.a) / fit.b)
            .collect();
        rescaled.push(curve);
    }
    let mut metric: f64 = 0.0;
    for i in 0..rescaled.len() {
        for j in (i + 1)..rescaled.len() {
            let d2: f64 = rescaled[i]
                .iter()
                .zip(rescaled[j].iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            metric = metric.max((d2 / n_grid as f64).sqrt());
        }
    }
    let mean: Vec<f64> = (0..n_grid)
        .map(|i| rescaled.iter().map(|c| c[i]).sum::<f64>() / rescaled.len() as f64)
        .collect();
    let curve_norm = (mean.iter().map(|x| x * x).sum::<f64>() / n_grid as f64).sqrt();
    Ok(Collapse { t_grid, rescaled, metric, curve_norm })
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&xi| xi >= x) {
        None => *ys.last().unwrap(),
        Some(0) => ys[0],
        Some(i) => {
            let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] * (1.0 - w) + ys[i] * w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::bandstructure;
    use crate::dynamics::initial_field;
    use crate::model::{build_model, ChainConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn initial_state_roundtrip_and_zero_entropy() {
        // Φ-basis initial field assembles back to the diagonal product-state
        // covariance, and every region has zero entropy
        let cfg = ChainConfig::new(24, 3, 1.0, 0.7).with_omega0(2.0);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let field = initial_field(&curves, 2.0);
        let assembly =
            assemble_covariance(&curves, &field, Region::full_chain(&cfg)).unwrap();
        let expect = crate::model::initial_covariance(&cfg).unwrap();
        for i in 0..48 {
            for j in 0..48 {
                assert!(
                    (assembly.cov[[i, j]] - expect[[i, j]]).abs() < 1e-10,
                    "({i},{j}): {} vs {}",
                    assembly.cov[[i, j]],
                    expect[[i, j]]
                );
            }
        }
        for region in [Region { start: 0, len: 6 }, Region { start: 3, len: 12 }] {
            let a = assemble_covariance(&curves, &field, region).unwrap();
            let s = gaussian_entropy(&a).unwrap();
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_mode_entropy_value() {
        // ν = 1: S = 1.5 ln 1.5 + 0.5 ln 2 ≈ 0.954771
        let expect = 1.5 * 1.5f64.ln() + 0.5 * 2f64.ln();
        assert_abs_diff_eq!(entropy_of_mode(1.0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_of_mode(1.0), 0.954771, epsilon = 1e-6);
        assert_abs_diff_eq!(entropy_of_mode(0.5), 0.0, epsilon = 1e-15);
        // h(n) = s(n + 1/2)
        assert_abs_diff_eq!(population_entropy(0.5), entropy_of_mode(1.0), epsilon = 1e-12);
    }

    #[test]
    fn entropy_additive_over_uncoupled_modes() {
        let mut cov = Array2::<f64>::zeros((4, 4));
        // two uncoupled modes with ν = 1 and ν = 0.8 (ordering x1 x2 p1 p2)
        cov[[0, 0]] = 1.0;
        cov[[2, 2]] = 1.0;
        cov[[1, 1]] = 0.4;
        cov[[3, 3]] = 1.6;
        let assembly =
            CovarianceAssembly { region: Region { start: 0, len: 2 }, cov, imag_residue: 0.0 };
        let s = gaussian_entropy(&assembly).unwrap();
        assert_abs_diff_eq!(
            s,
            entropy_of_mode(1.0) + entropy_of_mode(0.8),
            epsilon = 1e-10
        );
    }

    #[test]
    fn rejects_nonphysical_covariance() {
        let cov = Array2::<f64>::eye(2).mapv(|v| 0.3 * v);
        let assembly =
            CovarianceAssembly { region: Region { start: 0, len: 1 }, cov, imag_residue: 0.0 };
        assert!(matches!(
            gaussian_entropy(&assembly),
            Err(Error::NonphysicalCovariance { .. })
        ));
    }

    #[test]
    fn qp_entropy_zero_without_carriers() {
        let cfg = ChainConfig::new(64, 4, 1.0, 0.5);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let mut inputs = qp_inputs(&curves, 2.0).unwrap();
        for band in inputs.density0.iter_mut() {
            for v in band.iter_mut() {
                *v = 0.0;
            }
        }
        assert_abs_diff_eq!(qp_entropy(&inputs, 5.0, None).unwrap(), 0.0, epsilon = 1e-14);
        let asym = asymptotic_coefficient(&inputs).unwrap();
        assert_abs_diff_eq!(asym.total, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn qp_gamma0_linear_growth() {
        // γ = 0: S(t) = t · (1/R) Σ_j ∫ dk/π |v_j| h(n_j), exactly linear
        let cfg = ChainConfig::new(256, 4, 1.0, 0.0).with_omega0(2.0);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let inputs = qp_inputs(&curves, 2.0).unwrap();
        let s1 = qp_entropy(&inputs, 4.0, None).unwrap();
        let s2 = qp_entropy(&inputs, 8.0, None).unwrap();
        assert!(s1 > 0.0);
        assert_abs_diff_eq!(s2 / s1, 2.0, epsilon = 1e-10);
        // slope from the explicit formula
        let n = inputs.k.len() as f64;
        let mut slope = 0.0;
        for j in 0..inputs.speed.len() {
            for idx in 0..inputs.k.len() {
                slope += 2.0 * inputs.speed[j][idx]
                    * population_entropy(inputs.density0[j][idx]);
            }
        }
        slope /= inputs.r as f64 * n;
        assert_abs_diff_eq!(s1 / 4.0, slope, epsilon = 1e-10);
    }

    #[test]
    fn finite_size_weight_is_sawtooth() {
        let cfg = ChainConfig::new(256, 4, 1.0, 0.0).with_omega0(2.0);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let inputs = qp_inputs(&curves, 2.0).unwrap();
        // early times agree with the infinite-system weight
        let s_inf = qp_entropy(&inputs, 0.5, None).unwrap();
        let s_fin = qp_entropy(&inputs, 0.5, Some(256)).unwrap();
        assert!((s_inf - s_fin).abs() < 0.05 * s_inf.max(1e-12));
        // very late times: finite stays bounded by L/2-scale weights
        let s_late = qp_entropy(&inputs, 1e4, Some(256)).unwrap();
        assert!(s_late.is_finite());
    }

    #[test]
    fn sqrt_fit_synthetic() {
        let times: Vec<f64> = (1..200).map(|i| 0.5 * i as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 1.0 + 2.0 * t.sqrt()).collect();
        let trace = EntropyTrace {
            times: times.clone(),
            values,
            method: EntropyMethod::Qp,
            params: (0, 0, 0.0, 0.0, 0.0),
        };
        let fit = fit_sqrt(&trace, (1.0, 99.0)).unwrap();
        assert_abs_diff_eq!(fit.a, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.b, 2.0, epsilon = 1e-10);
        assert!(fit.rmse < 1e-12);
        assert_abs_diff_eq!(fit.alpha, 0.5, epsilon = 1e-6);

        // linear control: α = 1.0 ± 0.01
        let values: Vec<f64> = times.iter().map(|t| 0.3 * t).collect();
        let trace = EntropyTrace {
            times,
            values,
            method: EntropyMethod::Qp,
            params: (0, 0, 0.0, 0.0, 0.0),
        };
        let fit = fit_sqrt(&trace, (1.0, 99.0)).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.01, "alpha = {}", fit.alpha);

        // window too small
        let trace2 = EntropyTrace {
            times: vec![1.0, 2.0],
            values: vec![1.0, 2.0],
            method: EntropyMethod::Qp,
            params: (0, 0, 0.0, 0.0, 0.0),
        };
        assert!(matches!(
            fit_sqrt(&trace2, (0.0, 3.0)),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn collapse_of_affine_related_traces() {
        let times: Vec<f64> = (1..300).map(|i| 0.25 * i as f64).collect();
        let base: Vec<f64> = times.iter().map(|t| t.sqrt()).collect();
        let mut traces = Vec::new();
        let mut fits = Vec::new();
        for (a, b) in [(0.0, 1.0), (1.5, 0.7), (-0.4, 2.3)] {
            let values: Vec<f64> =
                base.iter().map(|s| a + b * s).collect();
            let trace = EntropyTrace {
                times: times.clone(),
                values,
                method: EntropyMethod::Qp,
                params: (0, 0, 0.0, 0.0, 0.0),
            };
            let fit = fit_sqrt(&trace, (2.0, 70.0)).unwrap();
            traces.push(trace);
            fits.push(fit);
        }
        let collapse = scaling_collapse(&traces, &fits, 200).unwrap();
        assert!(collapse.metric < 1e-10, "metric = {}", collapse.metric);
        assert!(collapse.curve_norm > 1.0);
        // identical traces collapse exactly
        let identical = vec![traces[0].clone(), traces[0].clone()];
        let fits2 = vec![fits[0].clone(), fits[0].clone()];
        let c2 = scaling_collapse(&identical, &fits2, 100).unwrap();
        assert_abs_diff_eq!(c2.metric, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn steady_state_entropy_is_area_law() {
        // steady-state entropy must not grow with region size (area law)
        let cfg = ChainConfig::new(48, 4, 1.0, 0.5);
        let model = build_model(&cfg).unwrap();
        let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
        let s8 = steady_state_entropy(&curves, Region { start: 0, len: 8 }).unwrap();
        let s16 = steady_state_entropy(&curves, Region { start: 0, len: 16 }).unwrap();
        let s24 = steady_state_entropy(&curves, Region { start: 0, len: 24 }).unwrap();
        assert!(s8 > 0.0);
        assert!((s16 - s24).abs() < 0.05 * s16, "area law: {s8} {s16} {s24}");
    }
}
