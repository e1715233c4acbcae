//! Per-wavevector algebra of the non-Hermitian effective Hamiltonian.
//!
//! With an `R`-site unit cell the effective Hamiltonian block-diagonalises
//! over wavevectors `k ∈ (−π, π]`. At each `k` it is encoded by a `2R x 2R`
//! matrix `H(k)` acting on the doubled spinor
//! `Ψ(k) = (a†_{k,0..R−1}, a_{−k,0..R−1})`, whose commutation relations are
//! carried by the signature `C = diag(I, −I)`.
//!
//! `H(k)` cannot be diagonalised canonically once measurement makes it
//! non-Hermitian, but a commutation-preserving `W` (with `W C W† = C`)
//! brings the generator to upper-triangular form `Z(k) = W† H(k) W`. The
//! diagonal of `Z` is the complex bandstructure
//! `[E_0(k)…E_{R−1}(k), E_0(−k)…E_{R−1}(−k)]`; at `k = 0` it reproduces
//! `E_j(0) = 2 √(4 sin²(π j / R) + m² − i γ R δ_{j,0})`.
//!
//! The construction goes through the classical generator `T = C H(k)`
//! governing Heisenberg evolution of the spinor: `W⁻¹ T W = C Z` is upper
//! triangular, so eigenvectors of `T` (ordered into particle and hole
//! blocks, labels assigned by continuity from the known `k = 0` values) are
//! Gram–Schmidt orthonormalised in the indefinite `C` inner product.

use ndarray::Array2;
use serde::Serialize;

use crate::linalg::{
    self, c_orthonormalize, canonical_inverse, canonicality_residual, dagger, lower_triangle_norm,
    signature_matrix, signature_signs,
};
use crate::model::RealSpaceModel;
use crate::{C64, Error, Result};

/// Eigenvalue-gap tolerance below which bands are treated as one cluster.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Closed-form band energy at `k = 0`:
/// `E_j(0) = 2 √(4 sin²(π j / R) + m² − i γ R δ_{j,0})`.
pub fn band_energy_at_zero(r: usize, m: f64, gamma: f64, j: usize) -> C64 {
    let s = (std::f64::consts::PI * j as f64 / r as f64).sin();
    let re = 4.0 * s * s + m * m;
    let im = if j == 0 { -gamma * r as f64 } else { 0.0 };
    2.0 * C64::new(re, im).sqrt()
}

/// One wavevector block of the effective Hamiltonian in the spinor basis.
#[derive(Debug, Clone)]
pub struct BlochBlock {
    /// Wavevector in `(−π, π]` (any real value is accepted; the lattice
    /// model only constrains mesh points).
    pub k: f64,
    /// Unit-cell size.
    pub r: usize,
    /// Mass the block was built with (kept for analytic references).
    pub m: f64,
    /// Measurement strength the block was built with.
    pub gamma: f64,
    /// Spinor-basis generator `H(k)`, `2R x 2R`.
    pub h: Array2<C64>,
    /// Hermitian part `(H + H†)/2`.
    pub x: Array2<C64>,
    /// Dissipative part `i (H − H†)/2`; positive semidefinite for `γ ≥ 0`.
    pub y: Array2<C64>,
    /// Analytic derivative `dH/dk` (used for group velocities).
    pub dh_dk: Array2<C64>,
}

impl BlochBlock {
    /// Commutation signature `C = diag(I_R, −I_R)`.
    pub fn signature(&self) -> Array2<C64> {
        signature_matrix(self.r)
    }

    /// Classical generator `T = C H(k)` of spinor Heisenberg evolution.
    pub fn classical_generator(&self) -> Array2<C64> {
        let mut t = self.h.clone();
        for i in self.r..2 * self.r {
            for j in 0..2 * self.r {
                t[[i, j]] = -t[[i, j]];
            }
        }
        t
    }
}

/// Build the Bloch block at wavevector `k`.
pub fn bloch_block(model: &RealSpaceModel, k: f64) -> BlochBlock {
    let r = model.config.r;
    let m = model.config.mass();
    let gamma = model.config.gamma;
    build_block(r, m, gamma, k)
}

/// Block builder from bare parameters (unit cell `r`, mass `m`, strength `γ`).
///
/// The position-coupling block is assembled from minimal-image displacements
/// (intra-cell tridiagonal plus the two corner hops to adjacent cells), which
/// agrees with the folded lattice sum at every mesh point for any cell count
/// and extends smoothly off-mesh for stencil work.
pub fn build_block(r: usize, m: f64, gamma: f64, k: f64) -> BlochBlock {
    let i_unit = C64::new(0.0, 1.0);
    let mut b = Array2::<C64>::zeros((r, r));
    for i in 0..r {
        b[[i, i]] += C64::from(2.0 + m * m);
        if i + 1 < r {
            b[[i, i + 1]] -= C64::from(1.0);
            b[[i + 1, i]] -= C64::from(1.0);
        }
    }
    let phase_p = (i_unit * k).exp();
    let phase_m = (-i_unit * k).exp();
    let mut db = Array2::<C64>::zeros((r, r));
    if r == 1 {
        b[[0, 0]] -= phase_p + phase_m;
        db[[0, 0]] = -i_unit * (phase_p - phase_m);
    } else {
        b[[r - 1, 0]] -= phase_p;
        b[[0, r - 1]] -= phase_m;
        db[[r - 1, 0]] = -i_unit * phase_p;
        db[[0, r - 1]] = i_unit * phase_m;
    }
    for i in 0..r {
        for j in 0..r {
            b[[i, j]] -= i_unit * gamma;
        }
    }

    let mut h = Array2::<C64>::zeros((2 * r, 2 * r));
    let mut dh = Array2::<C64>::zeros((2 * r, 2 * r));
    for i in 0..r {
        for j in 0..r {
            let eye = if i == j { C64::from(1.0) } else { C64::from(0.0) };
            h[[i, j]] = b[[i, j]] + eye;
            h[[r + i, r + j]] = b[[i, j]] + eye;
            h[[i, r + j]] = b[[i, j]] - eye;
            h[[r + i, j]] = b[[i, j]] - eye;
            dh[[i, j]] = db[[i, j]];
            dh[[r + i, r + j]] = db[[i, j]];
            dh[[i, r + j]] = db[[i, j]];
            dh[[r + i, j]] = db[[i, j]];
        }
    }
    let x = linalg::hermitian_part(&h);
    let y = linalg::antihermitian_part(&h);
    BlochBlock { k, r, m, gamma, h, x, y, dh_dk: dh }
}

/// Label-ordered eigen data used for continuity matching between wavevectors.
#[derive(Debug, Clone)]
pub struct BandReference {
    /// Eigenvalues in label order `[E_0(k)…E_{R−1}(k), −E_0(−k)…−E_{R−1}(−k)]`.
    pub values: Vec<C64>,
    /// Matching normalised eigenvector columns (absent for analytic references).
    pub vectors: Option<Array2<C64>>,
}

impl BandReference {
    /// Analytic `k = 0` reference from the closed-form band energies.
    pub fn analytic(r: usize, m: f64, gamma: f64) -> Self {
        let mut values = Vec::with_capacity(2 * r);
        for j in 0..r {
            values.push(band_energy_at_zero(r, m, gamma, j));
        }
        for j in 0..r {
            values.push(-band_energy_at_zero(r, m, gamma, j));
        }
        BandReference { values, vectors: None }
    }
}

/// Canonical transformation and upper-triangular generator at one wavevector.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub k: f64,
    pub r: usize,
    /// Canonical transformation `Ψ = W Φ`, `W C W† = C`.
    pub w: Array2<C64>,
    /// `W⁻¹ = C W† C`.
    pub w_inv: Array2<C64>,
    /// Upper-triangular generator `Z = W† H W`.
    pub z: Array2<C64>,
    /// Hermitian split `Z = X − iY` used by the correlation dynamics.
    pub x: Array2<C64>,
    pub y: Array2<C64>,
    /// Label-ordered normalised eigenvectors of `C H` (for continuity).
    pub eigvecs: Array2<C64>,
    /// Label-ordered eigenvalues of `C H`.
    pub eigvals: Vec<C64>,
    /// Eigenvalue derivatives `dλ/dk` per label slot (cell-index units).
    pub de_dk: Vec<C64>,
}

impl CanonicalForm {
    /// Band energies at `+k`: first half of `diag Z`.
    pub fn bands_pos(&self) -> Vec<C64> {
        (0..self.r).map(|j| self.z[[j, j]]).collect()
    }

    /// Band energies at `−k`: second half of `diag Z`.
    pub fn bands_neg(&self) -> Vec<C64> {
        (0..self.r).map(|j| self.z[[self.r + j, self.r + j]]).collect()
    }
}

/// Canonical triangularisation with labels matched to the analytic `k = 0`
/// reference. Suitable for standalone calls; mesh sweeps should thread the
/// previous point's [`CanonicalForm`] through [`triangularize_matched`].
pub fn triangularize(block: &BlochBlock) -> Result<CanonicalForm> {
    let reference = BandReference::analytic(block.r, block.m, block.gamma);
    triangularize_matched(block, &reference)
}

/// Canonical triangularisation with band labels assigned against `reference`
/// (eigenvector overlap when reference vectors are present, eigenvalue
/// distance otherwise; ties broken by smallest index).
pub fn triangularize_matched(
    block: &BlochBlock,
    reference: &BandReference,
) -> Result<CanonicalForm> {
    let r = block.r;
    let n = 2 * r;
    let t = block.classical_generator();
    let (vals, vecs) = linalg::eig(&t)?;

    let order = assign_labels(&vals, &vecs, reference, block.k)?;
    let mut label_vals = Vec::with_capacity(n);
    let mut label_vecs = Array2::<C64>::zeros((n, n));
    for (slot, &col) in order.iter().enumerate() {
        label_vals.push(vals[col]);
        let mut norm = 0.0;
        for i in 0..n {
            norm += vecs[[i, col]].norm_sqr();
        }
        let scale = C64::from(1.0 / norm.sqrt());
        for i in 0..n {
            label_vecs[[i, slot]] = vecs[[i, col]] * scale;
        }
    }

    // stabilise clusters of (near-)degenerate eigenvalues within each half:
    // replace their columns by an orthonormal basis of the same span
    for half in 0..2 {
        let base = half * r;
        for cluster in value_clusters(&label_vals[base..base + r]) {
            if cluster.len() > 1 {
                let idx: Vec<usize> = cluster.iter().map(|&i| base + i).collect();
                orthonormalize_columns(&mut label_vecs, &idx);
            }
        }
    }

    let signs = signature_signs(r);
    let w = c_orthonormalize(&label_vecs, &signs, block.k)?;
    let w_inv = canonical_inverse(&w, r);
    let z = dagger(&w).dot(&block.h).dot(&w);

    let canon_res = canonicality_residual(&w, r);
    if canon_res > 1e-10 {
        return Err(Error::DegenerateBands { k: block.k, gap: canon_res });
    }
    let lower = lower_triangle_norm(&z);
    if lower > 1e-10 * linalg::max_abs(&z).max(1.0) {
        return Err(Error::BandSortingFailure {
            k: block.k,
            reason: format!("triangularisation residual {lower:.3e}"),
        });
    }
    // spectrum consistency: diag Z equals the generator eigenvalues up to the
    // C sign flip on the hole block
    for j in 0..n {
        let sign = if j < r { 1.0 } else { -1.0 };
        let diff = (z[[j, j]] * sign - label_vals[j]).norm();
        if diff > 1e-8 * label_vals[j].norm().max(1.0) {
            return Err(Error::BandSortingFailure {
                k: block.k,
                reason: format!("diag(Z)[{j}] deviates from generator spectrum by {diff:.3e}"),
            });
        }
    }

    let de_dk = velocity_samples(&block.dh_dk, &label_vals, &label_vecs, r)?;

    let x = linalg::hermitian_part(&z);
    let y = linalg::antihermitian_part(&z);
    Ok(CanonicalForm {
        k: block.k,
        r,
        w,
        w_inv,
        z,
        x,
        y,
        eigvecs: label_vecs,
        eigvals: label_vals,
        de_dk,
    })
}

/// Assign eigenvalue/eigenvector columns to label slots.
fn assign_labels(
    vals: &ndarray::Array1<C64>,
    vecs: &Array2<C64>,
    reference: &BandReference,
    k: f64,
) -> Result<Vec<usize>> {
    let n = vals.len();
    let mut order = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    let mut slot_done = vec![false; n];
    match &reference.vectors {
        None => {
            // greedy closest-eigenvalue assignment, smallest distances first
            let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
            for slot in 0..n {
                for col in 0..n {
                    pairs.push(((vals[col] - reference.values[slot]).norm(), slot, col));
                }
            }
            pairs.sort_by(|a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            for (_, slot, col) in pairs {
                if !slot_done[slot] && !taken[col] {
                    order[slot] = col;
                    slot_done[slot] = true;
                    taken[col] = true;
                }
            }
            repair_hole_pairing(&mut order, vals, reference);
        }
        Some(ref_vecs) => {
            // eigenvector overlap maximisation with the previous mesh point
            let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
            for slot in 0..n {
                for col in 0..n {
                    let mut overlap = C64::new(0.0, 0.0);
                    let mut norm = 0.0;
                    for i in 0..n {
                        overlap += ref_vecs[[i, slot]].conj() * vecs[[i, col]];
                        norm += vecs[[i, col]].norm_sqr();
                    }
                    pairs.push((-(overlap.norm() / norm.sqrt()), slot, col));
                }
            }
            pairs.sort_by(|a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            for (score, slot, col) in pairs {
                if !slot_done[slot] && !taken[col] {
                    if -score < 0.35 {
                        return Err(Error::BandSortingFailure {
                            k,
                            reason: format!(
                                "ambiguous continuity match (best overlap {:.3})",
                                -score
                            ),
                        });
                    }
                    order[slot] = col;
                    slot_done[slot] = true;
                    taken[col] = true;
                }
            }
        }
    }
    Ok(order)
}

/// Group indices of (near-)equal complex values; clusters need not be
/// contiguous (bands `j` and `R − j` share an energy at `k = 0`).
fn value_clusters(values: &[C64]) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| {
        values[a]
            .re
            .partial_cmp(&values[b].re)
            .unwrap()
            .then(values[a].im.partial_cmp(&values[b].im).unwrap())
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in &sorted {
        match clusters.last_mut() {
            Some(c) if (values[*c.last().unwrap()] - values[i]).norm() < DEGENERACY_TOL => {
                c.push(i)
            }
            _ => clusters.push(vec![i]),
        }
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters
}

/// Keep the particle and hole slots of one band describing the same analytic
/// branch through a reference degeneracy.
///
/// Bands that are degenerate at the reference point (`j` and `R − j` cross at
/// `k = 0`) split linearly: the particle slot carries `E_j(k) ≈ E + v_j k`
/// and its hole partner `−E_j(−k) ≈ −E + v_j k`, so the two deviations from
/// the reference must match. Greedy per-slot matching assigns them
/// independently; this pass permutes hole assignments inside each degenerate
/// cluster to minimise the deviation mismatch.
fn repair_hole_pairing(
    order: &mut [usize],
    vals: &ndarray::Array1<C64>,
    reference: &BandReference,
) {
    let n = order.len();
    let r = n / 2;
    for slots in value_clusters(&reference.values[0..r]) {
        if slots.len() < 2 {
            continue;
        }
        let dev_p: Vec<C64> =
            slots.iter().map(|&j| vals[order[j]] - reference.values[j]).collect();
        let hole_cols: Vec<usize> = slots.iter().map(|&j| order[r + j]).collect();
        let dev_h: Vec<C64> = slots
            .iter()
            .enumerate()
            .map(|(i, &j)| vals[hole_cols[i]] - reference.values[r + j])
            .collect();
        let c = slots.len();
        let mut best: Vec<usize> = (0..c).collect();
        let mut best_cost = f64::INFINITY;
        let mut perm: Vec<usize> = (0..c).collect();
        loop {
            let cost: f64 = (0..c).map(|i| (dev_h[perm[i]] - dev_p[i]).norm()).sum();
            if cost < best_cost {
                best_cost = cost;
                best = perm.clone();
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        for (i, &j) in slots.iter().enumerate() {
            order[r + j] = hole_cols[best[i]];
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Plain Gram–Schmidt on the listed columns (stabilises degenerate clusters).
fn orthonormalize_columns(m: &mut Array2<C64>, cols: &[usize]) {
    let n = m.nrows();
    for (ia, &a) in cols.iter().enumerate() {
        for &b in &cols[..ia] {
            let mut overlap = C64::new(0.0, 0.0);
            for i in 0..n {
                overlap += m[[i, b]].conj() * m[[i, a]];
            }
            for i in 0..n {
                let corr = overlap * m[[i, b]];
                m[[i, a]] -= corr;
            }
        }
        let mut norm = 0.0;
        for i in 0..n {
            norm += m[[i, a]].norm_sqr();
        }
        let scale = C64::from(1.0 / norm.sqrt());
        for i in 0..n {
            m[[i, a]] *= scale;
        }
    }
}

/// First-order eigenvalue derivatives `dλ/dk` from `V⁻¹ (C dH/dk) V`;
/// degenerate clusters are resolved by diagonalising the projected block.
fn velocity_samples(
    dh_dk: &Array2<C64>,
    vals: &[C64],
    vecs: &Array2<C64>,
    r: usize,
) -> Result<Vec<C64>> {
    let n = vals.len();
    let mut dt = dh_dk.clone();
    for i in r..n {
        for j in 0..n {
            dt[[i, j]] = -dt[[i, j]];
        }
    }
    let vinv = linalg::inv(&vecs.to_owned())?;
    let m = vinv.dot(&dt).dot(vecs);
    let mut out = vec![C64::new(0.0, 0.0); n];
    for half in 0..2 {
        let base = half * r;
        for cluster in value_clusters(&vals[base..base + r]) {
            let idx: Vec<usize> = cluster.iter().map(|&i| base + i).collect();
            if idx.len() == 1 {
                out[idx[0]] = m[[idx[0], idx[0]]];
            } else {
                // degenerate subspace: branch slopes are the eigenvalues of
                // the projected perturbation block
                let c = idx.len();
                let mut block = Array2::<C64>::zeros((c, c));
                for (a, &ia) in idx.iter().enumerate() {
                    for (b, &ib) in idx.iter().enumerate() {
                        block[[a, b]] = m[[ia, ib]];
                    }
                }
                let (bvals, _) = linalg::eig(&block)?;
                let mut b: Vec<C64> = bvals.iter().copied().collect();
                b.sort_by(|a, c| c.re.partial_cmp(&a.re).unwrap());
                for (i, &slot) in idx.iter().enumerate() {
                    out[slot] = b[i];
                }
            }
        }
    }
    Ok(out)
}

/// Complex band curves over a wavevector mesh.
#[derive(Debug, Clone)]
pub struct BandCurves {
    /// The mesh, in mesh order.
    pub k: Vec<f64>,
    /// `energy[band][mesh index]`.
    pub energy: Vec<Vec<C64>>,
    /// Site-units group velocity `v_j(k) = R · Re ∂_k E_j(k)`.
    pub velocity: Vec<Vec<f64>>,
    /// Index of the dissipative band (nonzero `Im E` at `k = 0`).
    pub gapped_band: usize,
    /// `|Im E_gapped(0)|`.
    pub dissipative_gap: f64,
    /// Canonical forms per representative: `(mesh index of the k ≥ 0 point, form)`.
    pub forms: Vec<(usize, CanonicalForm)>,
    pub r: usize,
}

impl BandCurves {
    /// Max site-units group velocity over gapless bands.
    pub fn v_max(&self) -> f64 {
        let mut v: f64 = 0.0;
        for (j, band) in self.velocity.iter().enumerate() {
            if j == self.gapped_band {
                continue;
            }
            for &x in band {
                v = v.max(x.abs());
            }
        }
        v
    }
}

/// Sweep the mesh and assemble labelled band curves.
///
/// Only representatives `k ∈ [0, π]` are triangularised; the `−k` half of the
/// mesh is filled from the hole block of `diag Z`, which keeps band labels
/// consistent across the zone by construction. Labels start from the
/// analytic `k = 0` energies and propagate by eigenvector-overlap continuity.
pub fn bandstructure(model: &RealSpaceModel, k_mesh: &[f64]) -> Result<BandCurves> {
    let r = model.config.r;
    let m = model.config.mass();
    let gamma = model.config.gamma;
    let n = k_mesh.len();

    let mut reps: Vec<usize> = (0..n).filter(|&i| k_mesh[i] >= -1e-12).collect();
    reps.sort_by(|&a, &b| k_mesh[a].partial_cmp(&k_mesh[b]).unwrap());

    // Anchor the label sweep at the first nonzero k with the analytic
    // reference: at k = 0 itself paired bands are degenerate and eigenvector
    // continuity out of an arbitrary cluster basis would decouple the
    // particle and hole labels of one band.
    let mut forms: Vec<(usize, CanonicalForm)> = Vec::with_capacity(reps.len());
    let analytic = BandReference::analytic(r, m, gamma);
    let mut reference: Option<BandReference> = None;
    for &idx in &reps {
        let block = bloch_block(model, k_mesh[idx]);
        let form = if k_mesh[idx].abs() < 1e-12 {
            triangularize_matched(&block, &analytic)?
        } else {
            let form = match &reference {
                None => triangularize_matched(&block, &analytic)?,
                Some(prev) => triangularize_matched(&block, prev)?,
            };
            reference = Some(BandReference {
                values: form.eigvals.clone(),
                vectors: Some(form.eigvecs.clone()),
            });
            form
        };
        forms.push((idx, form));
    }

    let mut energy = vec![vec![C64::new(0.0, 0.0); n]; r];
    let mut velocity = vec![vec![0.0f64; n]; r];
    for (idx, form) in &forms {
        let pos = form.bands_pos();
        let neg = form.bands_neg();
        for j in 0..r {
            energy[j][*idx] = pos[j];
            velocity[j][*idx] = r as f64 * form.de_dk[j].re;
        }
        let kneg = -k_mesh[*idx];
        if let Some(nidx) = find_mesh_index(k_mesh, kneg) {
            if nidx != *idx {
                for j in 0..r {
                    energy[j][nidx] = neg[j];
                    velocity[j][nidx] = -(r as f64) * form.de_dk[r + j].re;
                }
            }
        }
    }

    // continuity check over the zone in ascending-k order
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| k_mesh[a].partial_cmp(&k_mesh[b]).unwrap());
    let dk = 2.0 * std::f64::consts::PI / n as f64;
    let mut max_slope: f64 = 1.0;
    for j in 0..r {
        for w in sorted.windows(2) {
            let d = (energy[j][w[1]] - energy[j][w[0]]).norm() / dk;
            max_slope = max_slope.max(d);
        }
    }
    for j in 0..r {
        for w in sorted.windows(2) {
            let jump = (energy[j][w[1]] - energy[j][w[0]]).norm();
            if jump > 10.0 * dk * max_slope {
                return Err(Error::BandSortingFailure {
                    k: k_mesh[w[1]],
                    reason: format!("band {j} discontinuity {jump:.3e} exceeds continuity bound"),
                });
            }
        }
    }

    let zero_idx = find_mesh_index(k_mesh, 0.0).expect("mesh always contains k = 0");
    let gapped_band = 0;
    let dissipative_gap = energy[0][zero_idx].im.abs();
    if gamma > 0.0 {
        for (j, band) in energy.iter().enumerate() {
            let im0 = band[zero_idx].im.abs();
            if j == gapped_band && im0 < 0.45 * gamma {
                return Err(Error::BandSortingFailure {
                    k: 0.0,
                    reason: format!("band 0 lacks a dissipative gap (|Im E| = {im0:.3e})"),
                });
            }
            if j != gapped_band && im0 > 1e-8 * (1.0 + band[zero_idx].norm()) {
                return Err(Error::BandSortingFailure {
                    k: 0.0,
                    reason: format!("band {j} unexpectedly gapped (|Im E| = {im0:.3e})"),
                });
            }
        }
    }

    Ok(BandCurves { k: k_mesh.to_vec(), energy, velocity, gapped_band, dissipative_gap, forms, r })
}

fn find_mesh_index(mesh: &[f64], k: f64) -> Option<usize> {
    let two_pi = 2.0 * std::f64::consts::PI;
    mesh.iter().position(|&km| {
        let d = (km - k).rem_euclid(two_pi);
        d < 1e-9 || two_pi - d < 1e-9
    })
}

/// Small-`k` expansion coefficients of one band:
/// `E_j(k) = E_j + v_j k + (δ_j/2) k² − i Γ_j k² + O(k³)`.
#[derive(Debug, Clone, Serialize)]
pub struct BandExpansion {
    pub band: usize,
    /// Band energy at `k = 0`.
    pub energy: f64,
    /// Linear (group-velocity) coefficient in cell-index units.
    pub velocity: f64,
    /// Real quadratic dispersion `δ_j`.
    pub curvature: f64,
    /// Dissipative quadratic coefficient `Γ_j ≥ 0`.
    pub decay: f64,
    /// rms residual of the degree-3 fit.
    pub residual: f64,
}

/// Sample one gapless band on a symmetric stencil near `k = 0` and fit the
/// expansion coefficients by a degree-3 least-squares polynomial.
pub fn expand_band(
    model: &RealSpaceModel,
    band: usize,
    k_max: f64,
    n_points: usize,
) -> Result<BandExpansion> {
    let samples = sample_band(model, band, k_max, n_points)?;
    fit_expansion(band, &samples)
}

/// Continuity-tracked samples `(k, E_band(k))` on `±k_max`. `k = 0` itself is
/// excluded: paired bands cross there and the label assignment within the
/// degenerate cluster is arbitrary.
pub fn sample_band(
    model: &RealSpaceModel,
    band: usize,
    k_max: f64,
    n_points: usize,
) -> Result<Vec<(f64, C64)>> {
    assert!(n_points >= 5, "stencil needs at least 5 points");
    assert!(band < model.config.r);
    let r = model.config.r;
    let m = model.config.mass();
    let gamma = model.config.gamma;
    let step = k_max / n_points as f64;
    let mut reference = BandReference::analytic(r, m, gamma);
    let mut out = Vec::with_capacity(2 * n_points);
    for i in 1..=n_points {
        let k = step * i as f64;
        let block = build_block(r, m, gamma, k);
        let form = triangularize_matched(&block, &reference)?;
        reference =
            BandReference { values: form.eigvals.clone(), vectors: Some(form.eigvecs.clone()) };
        out.push((k, form.bands_pos()[band]));
        out.push((-k, form.bands_neg()[band]));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

fn fit_expansion(band: usize, samples: &[(f64, C64)]) -> Result<BandExpansion> {
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<C64> = samples.iter().map(|s| s.1).collect();
    let (c, residual) = linalg::polyfit(&x, &y, 3)?;
    let energy = c[0].re;
    let threshold = 1e-6 * energy.abs().max(1e-6);
    if residual > threshold {
        return Err(Error::PoorFit { residual, threshold });
    }
    Ok(BandExpansion {
        band,
        energy,
        velocity: c[1].re,
        curvature: 2.0 * c[2].re,
        decay: -c[2].im,
        residual,
    })
}
