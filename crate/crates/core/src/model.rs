//! Real-space model construction: chain couplings, the block measurement
//! matrix, the initial Gaussian product state, and configuration handling.
//!
//! The chain Hamiltonian is `H = Σ_ij V_ij x_i x_j + Σ_i p_i²` with
//! `V = −∇² + m² I` on a periodic lattice of `L` sites. Monitoring acts on
//! coarse observables `O_b = x_{bR} + … + x_{bR+R−1}`, one per block of `R`
//! adjacent sites, which makes the measurement matrix `M` block-diagonal with
//! all-ones `R x R` blocks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default regularisation applied to `m = 0` when explicitly requested.
pub const ZERO_MASS_EPSILON: f64 = 1e-8;

/// Physical and numerical parameters of a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of lattice sites.
    pub l: usize,
    /// Measurement range = unit-cell size; must divide `l`.
    pub r: usize,
    /// Oscillator mass gap (`m ≥ 0`; zero only with regularisation).
    pub m: f64,
    /// Measurement strength `γ ≥ 0`.
    pub gamma: f64,
    /// Frequency of the decoupled oscillators whose ground state initialises
    /// each site. Defaults to `m + 1` so every band starts generically
    /// excited.
    #[serde(default)]
    pub omega0: Option<f64>,
    /// Final output time.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Output sampling interval.
    #[serde(default = "default_dt_out")]
    pub dt_out: f64,
    /// RNG seed (used by the Fock oracle only).
    #[serde(default)]
    pub seed: Option<u64>,
    /// Replace `m = 0` by [`ZERO_MASS_EPSILON`] instead of rejecting it.
    #[serde(default)]
    pub regularize_zero_mass: bool,
}

fn default_t_max() -> f64 {
    10.0
}

fn default_dt_out() -> f64 {
    0.5
}

impl ChainConfig {
    /// Minimal constructor with defaults for the time grid.
    pub fn new(l: usize, r: usize, m: f64, gamma: f64) -> Self {
        ChainConfig {
            l,
            r,
            m,
            gamma,
            omega0: None,
            t_max: default_t_max(),
            dt_out: default_dt_out(),
            seed: None,
            regularize_zero_mass: false,
        }
    }

    /// Builder-style setter for the initial-state frequency.
    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = Some(omega0);
        self
    }

    /// Builder-style setter for the output time grid.
    pub fn with_time_grid(mut self, t_max: f64, dt_out: f64) -> Self {
        self.t_max = t_max;
        self.dt_out = dt_out;
        self
    }

    /// Parse from the key-value config text format (TOML syntax with keys
    /// `L, R, m, gamma, omega0, t_max, dt_out, seed`).
    pub fn from_config_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(alias = "L")]
            l: usize,
            #[serde(alias = "R")]
            r: usize,
            m: f64,
            gamma: f64,
            #[serde(default)]
            omega0: Option<f64>,
            #[serde(default = "default_t_max")]
            t_max: f64,
            #[serde(default = "default_dt_out")]
            dt_out: f64,
            #[serde(default)]
            seed: Option<u64>,
            #[serde(default)]
            regularize_zero_mass: bool,
        }
        let raw: Raw = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let cfg = ChainConfig {
            l: raw.l,
            r: raw.r,
            m: raw.m,
            gamma: raw.gamma,
            omega0: raw.omega0,
            t_max: raw.t_max,
            dt_out: raw.dt_out,
            seed: raw.seed,
            regularize_zero_mass: raw.regularize_zero_mass,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validate invariants; returns the effective (possibly regularised) mass.
    pub fn validate(&self) -> Result<f64> {
        if self.l == 0 {
            return Err(Error::InvalidConfig { field: "L", reason: "must be positive".into() });
        }
        if self.r == 0 || self.l % self.r != 0 {
            return Err(Error::InvalidConfig {
                field: "R",
                reason: format!("R = {} must divide L = {}", self.r, self.l),
            });
        }
        if self.m < 0.0 {
            return Err(Error::InvalidConfig { field: "m", reason: "must be >= 0".into() });
        }
        if self.m == 0.0 && !self.regularize_zero_mass {
            return Err(Error::InvalidConfig {
                field: "m",
                reason: "m = 0 leaves a free zero mode; set regularize_zero_mass to \
                         substitute m = 1e-8"
                    .into(),
            });
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidConfig { field: "gamma", reason: "must be >= 0".into() });
        }
        if self.omega0().is_nan() || self.omega0() <= 0.0 {
            return Err(Error::InvalidConfig { field: "omega0", reason: "must be > 0".into() });
        }
        if self.t_max < 0.0 || self.dt_out <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "t_max/dt_out",
                reason: "need t_max >= 0 and dt_out > 0".into(),
            });
        }
        Ok(self.mass())
    }

    /// Effective mass after optional zero-mode regularisation.
    pub fn mass(&self) -> f64 {
        if self.m == 0.0 && self.regularize_zero_mass {
            ZERO_MASS_EPSILON
        } else {
            self.m
        }
    }

    /// Initial-state frequency (defaults to `m + 1`).
    pub fn omega0(&self) -> f64 {
        self.omega0.unwrap_or(self.m + 1.0)
    }

    /// Number of unit cells `N = L/R`.
    pub fn n_cells(&self) -> usize {
        self.l / self.r
    }

    /// Wavevector mesh `k_n = 2π n / N` mapped into `(−π, π]`, in mesh order
    /// `n = 0..N`.
    pub fn k_mesh(&self) -> Vec<f64> {
        let n_cells = self.n_cells();
        (0..n_cells)
            .map(|n| {
                let k = 2.0 * std::f64::consts::PI * n as f64 / n_cells as f64;
                if k > std::f64::consts::PI + 1e-12 {
                    k - 2.0 * std::f64::consts::PI
                } else {
                    k
                }
            })
            .collect()
    }

    /// Output time grid `0, dt_out, …, t_max`.
    pub fn t_grid(&self) -> Vec<f64> {
        let n = (self.t_max / self.dt_out).round() as usize;
        (0..=n).map(|i| i as f64 * self.dt_out).collect()
    }
}

/// Real-space couplings of the monitored chain.
#[derive(Debug, Clone)]
pub struct RealSpaceModel {
    /// Position-position coupling matrix `V = −∇² + m² I` (L x L).
    pub couplings: Array2<f64>,
    /// Measurement matrix `M` (L x L, block all-ones, PSD, rank L/R).
    pub measurement: Array2<f64>,
    /// The validated configuration this model was built from.
    pub config: ChainConfig,
}

/// Build `V` and `M` from a validated configuration.
///
/// The periodic Laplacian accumulates one `−1` per directed bond, so the
/// degenerate geometries `L = 1` (self-bond) and `L = 2` (doubled bond) come
/// out right without special cases.
pub fn build_model(config: &ChainConfig) -> Result<RealSpaceModel> {
    let m_eff = config.validate()?;
    let l = config.l;
    let mut v = Array2::<f64>::zeros((l, l));
    for i in 0..l {
        v[[i, i]] += 2.0 + m_eff * m_eff;
        let j = (i + 1) % l;
        v[[i, j]] -= 1.0;
        v[[j, i]] -= 1.0;
    }
    let mut meas = Array2::<f64>::zeros((l, l));
    for b in 0..config.n_cells() {
        for i in 0..config.r {
            for j in 0..config.r {
                meas[[b * config.r + i, b * config.r + j]] = 1.0;
            }
        }
    }
    Ok(RealSpaceModel { couplings: v, measurement: meas, config: config.clone() })
}

/// Initial unentangled Gaussian state: every site in the ground state of a
/// decoupled oscillator of frequency `omega0`.
#[derive(Debug, Clone, Copy)]
pub struct InitialState {
    /// Local frequency of the decoupled oscillators.
    pub omega0: f64,
}

impl InitialState {
    /// Per-site `⟨x²⟩ = 1/(2ω₀)`.
    pub fn xx(&self) -> f64 {
        0.5 / self.omega0
    }

    /// Per-site `⟨p²⟩ = ω₀/2`.
    pub fn pp(&self) -> f64 {
        0.5 * self.omega0
    }
}

/// Real-space covariance of the initial product state: `2L x 2L`, ordered
/// `(x_1..x_L, p_1..p_L)`, symmetrised.
pub fn initial_covariance(config: &ChainConfig) -> Result<Array2<f64>> {
    if !(config.omega0() > 0.0) {
        return Err(Error::InvalidConfig { field: "omega0", reason: "must be > 0".into() });
    }
    let state = InitialState { omega0: config.omega0() };
    let l = config.l;
    let mut g = Array2::<f64>::zeros((2 * l, 2 * l));
    for i in 0..l {
        g[[i, i]] = state.xx();
        g[[l + i, l + i]] = state.pp();
    }
    Ok(g)
}

/// Serializable summary of a constructed model (emitted as JSON by the CLI).
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub l: usize,
    pub r: usize,
    pub n_cells: usize,
    pub mass: f64,
    pub gamma: f64,
    pub omega0: f64,
    pub measurement_rank: usize,
    pub coupling_spectrum_min: f64,
    pub coupling_spectrum_max: f64,
}

impl RealSpaceModel {
    /// Summary with the analytically known coupling spectrum bounds.
    pub fn summary(&self) -> ModelSummary {
        let m = self.config.mass();
        ModelSummary {
            l: self.config.l,
            r: self.config.r,
            n_cells: self.config.n_cells(),
            mass: m,
            gamma: self.config.gamma,
            omega0: self.config.omega0(),
            measurement_rank: self.config.n_cells(),
            coupling_spectrum_min: m * m,
            coupling_spectrum_max: self.max_dispersion(),
        }
    }

    fn max_dispersion(&self) -> f64 {
        let m = self.config.mass();
        let l = self.config.l;
        (0..l)
            .map(|n| {
                let q = 2.0 * std::f64::consts::PI * n as f64 / l as f64;
                4.0 * (q / 2.0).sin().powi(2) + m * m
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray_linalg::{Eigh, UPLO};

    #[test]
    fn r1_measurement_is_identity() {
        let cfg = ChainConfig::new(4, 1, 1.0, 0.5);
        let model = build_model(&cfg).unwrap();
        assert_eq!(model.measurement, Array2::eye(4));
        for i in 0..4 {
            assert_abs_diff_eq!(model.couplings[[i, i]], 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(model.couplings[[i, (i + 1) % 4]], -1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn r2_massless_blocks() {
        let cfg = ChainConfig { regularize_zero_mass: true, ..ChainConfig::new(4, 2, 0.0, 1.0) };
        let model = build_model(&cfg).unwrap();
        for i in 0..4 {
            // m -> 1e-8 regularisation is invisible at this tolerance
            assert_abs_diff_eq!(model.couplings[[i, i]], 2.0, epsilon = 1e-12);
        }
        for b in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(
                        model.measurement[[2 * b + i, 2 * b + j]],
                        1.0,
                        epsilon = 1e-15
                    );
                }
            }
        }
        assert_abs_diff_eq!(model.measurement[[0, 2]], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn l6_r3_measurement_spectrum() {
        // brute-force diagonalisation: blocks of all-ones have spectrum {R, 0, 0}
        let cfg = ChainConfig::new(6, 3, 1.0, 1.0);
        let model = build_model(&cfg).unwrap();
        let (vals, _) = model.measurement.eigh(UPLO::Lower).unwrap();
        let mut vals: Vec<f64> = vals.to_vec();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected = [3.0, 3.0, 0.0, 0.0, 0.0, 0.0];
        for (v, e) in vals.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(v, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn measurement_is_psd_for_various_shapes() {
        for &(l, r) in &[(6, 1), (6, 2), (6, 3), (6, 6), (8, 4), (2, 1), (12, 4)] {
            let cfg = ChainConfig::new(l, r, 0.7, 0.3);
            let model = build_model(&cfg).unwrap();
            let (vals, _) = model.measurement.eigh(UPLO::Lower).unwrap();
            let rank = vals.iter().filter(|v| **v > 1e-9).count();
            assert!(vals.iter().all(|v| *v > -1e-12));
            assert_eq!(rank, l / r);
        }
    }

    #[test]
    fn coupling_spectrum_matches_dispersion() {
        // V diagonalises in Fourier space with eigenvalues 4 sin²(q/2) + m²
        for &l in &[2usize, 3, 8, 17, 64] {
            let m = 0.8;
            let cfg = ChainConfig::new(l, 1, m, 0.0);
            let model = build_model(&cfg).unwrap();
            let (vals, _) = model.couplings.eigh(UPLO::Lower).unwrap();
            let mut got: Vec<f64> = vals.to_vec();
            let mut expect: Vec<f64> = (0..l)
                .map(|n| {
                    let q = 2.0 * std::f64::consts::PI * n as f64 / l as f64;
                    4.0 * (q / 2.0).sin().powi(2) + m * m
                })
                .collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, e) in got.iter().zip(expect.iter()) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn initial_covariance_scaling_and_purity() {
        let cfg = ChainConfig::new(4, 2, 1.0, 0.5).with_omega0(2.0);
        let g = initial_covariance(&cfg).unwrap();
        assert_abs_diff_eq!(g[[0, 0]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(g[[4, 4]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[[0, 4]], 0.0, epsilon = 1e-15);
        let nus = crate::linalg::symplectic_eigenvalues(&g).unwrap();
        for nu in nus {
            assert_abs_diff_eq!(nu, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_rejections() {
        assert!(matches!(
            ChainConfig::new(5, 2, 1.0, 0.5).validate(),
            Err(Error::InvalidConfig { field: "R", .. })
        ));
        assert!(matches!(
            ChainConfig::new(4, 2, 0.0, 0.5).validate(),
            Err(Error::InvalidConfig { field: "m", .. })
        ));
        let ok = ChainConfig { regularize_zero_mass: true, ..ChainConfig::new(4, 2, 0.0, 0.5) };
        assert_abs_diff_eq!(ok.validate().unwrap(), ZERO_MASS_EPSILON, epsilon = 1e-20);
        assert!(ChainConfig::new(4, 2, 1.0, -0.1).validate().is_err());
        assert!(ChainConfig::new(4, 2, 1.0, 0.5).with_omega0(-1.0).validate().is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let text = "L = 8\nR = 4\nm = 1.0\ngamma = 0.5\nomega0 = 2.0\nt_max = 3.0\n\
                    dt_out = 0.1\nseed = 7\n";
        let cfg = ChainConfig::from_config_str(text).unwrap();
        assert_eq!(cfg.l, 8);
        assert_eq!(cfg.r, 4);
        assert_eq!(cfg.seed, Some(7));
        assert_abs_diff_eq!(cfg.omega0(), 2.0, epsilon = 1e-15);
        assert_eq!(cfg.t_grid().len(), 31);
    }

    #[test]
    fn k_mesh_closed_under_negation() {
        for &(l, r) in &[(12, 3), (8, 2), (6, 1), (10, 5)] {
            let cfg = ChainConfig::new(l, r, 1.0, 0.0);
            let mesh = cfg.k_mesh();
            assert_eq!(mesh.len(), l / r);
            for &k in &mesh {
                assert!(k > -std::f64::consts::PI - 1e-12 && k <= std::f64::consts::PI + 1e-12);
                let neg = mesh.iter().any(|&k2| {
                    let d = (k + k2).rem_euclid(2.0 * std::f64::consts::PI);
                    d < 1e-9 || (2.0 * std::f64::consts::PI - d) < 1e-9
                });
                assert!(neg, "mesh not closed under k -> -k at k = {k}");
            }
        }
    }
}
