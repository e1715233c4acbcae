use mhc_core::bloch::*;
use mhc_core::dynamics::*;
use mhc_core::entropy::*;
use mhc_core::model::*;
use mhc_core::linalg::*;
use mhc_core::C64;
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};

fn main() {
    let cfg = ChainConfig::new(24, 4, 1.0, 0.5);
    let model = build_model(&cfg).unwrap();
    let curves = bandstructure(&model, &cfg.k_mesh()).unwrap();
    let field = CorrelationField::steady_state(&curves);
    // per-k physicality of sigma_psi = W W^dag / 2
    for (idx, form) in &curves.forms {
        let sig_psi = form.w.dot(&dagger(&form.w)).mapv(|z| 0.5*z);
        let c = signature_matrix(4);
        for sign in [-0.5, 0.5] {
            let m = &sig_psi + &c.mapv(|z| sign*z);
            let (vals, _) = m.eigh(UPLO::Lower).unwrap();
            let minv = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            if minv < -1e-10 { println!("rep {idx} sign {sign}: min eig {minv:.3e}"); }
        }
    }
    println!("per-k physicality checked");
    let assembly = assemble_covariance(&curves, &field, Region::full_chain(&cfg)).unwrap();
    let nus = symplectic_eigenvalues(&assembly.cov).unwrap();
    let min = nus.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = nus.iter().cloned().fold(0.0f64, f64::max);
    println!("full chain nu range: [{min:.12}, {max:.12}] (expect all 0.5)");
    // also check G + i Omega/2 >= 0 via min eig of the 2L complex matrix
    let l = 24;
    let mut m = Array2::<C64>::zeros((2*l, 2*l));
    for i in 0..2*l { for j in 0..2*l { m[[i,j]] = C64::from(assembly.cov[[i,j]]); } }
    for i in 0..l {
        m[[i, l+i]] += C64::new(0.0, 0.5);
        m[[l+i, i]] -= C64::new(0.0, 0.5);
    }
    let (vals, _) = m.eigh(UPLO::Lower).unwrap();
    let minv = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("min eig of G + i Omega/2: {minv:.3e}");
}
