//! Brute-force reference for the linear and two-photon response.
//!
//! The self-energy is replaced by a star of `N` discrete bath modes coupled
//! to the exciton, and the driven system is truncated at two excitations.
//! In the weak-drive limit the state is `|0⟩ + ψ¹ + ψ²`, with
//!
//! ```text
//! A ψ¹ = e_c,                         A = ω_L − h
//! A X + X Aᵀ − 2U X_xx E_xx = S,       S = (e_c ψ¹ᵀ + ψ¹ e_cᵀ)/√2
//! ```
//!
//! where `h` is the non-Hermitian one-excitation Hamiltonian and the
//! symmetric `X` stores the pair amplitudes, `|ψ²⟩ = 2^{-1/2} Σ X_ij a_i† a_j† |0⟩`.
//! A cavity photon detection leaves `|0⟩ + (√2 X_c· / ψ¹_c)`, which relaxes
//! back to `|0⟩ + ψ¹` under the driven dynamics of the ≤ 1 excitation block.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::numerics::quad::{integrate, integrate_real, QuadOptions};
use rayon::prelude::*;
use crate::selfenergy::SelfEnergyTable;
use crate::twophoton::{TauGrid, TwoPhotonResult};
use crate::C64;

/// Largest allowed bath reconstruction error, as a fraction of δ_dis.
pub const MAX_RECONSTRUCTION_ERROR: f64 = 0.02;

/// Fraction of δ_dis below which `Im Σ` is treated as outside the support.
const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Star discretization of a self-energy.
#[derive(Debug, Clone, Serialize)]
pub struct BathDiscretization {
    pub energies: Vec<f64>,
    pub couplings: Vec<f64>,
    /// Mode spacing, also used as the broadening of the reconstruction.
    pub spacing: f64,
    /// max_ω |Σ_bath(ω + iη) − Σ_ref(ω + iη)| / δ_dis, where the reference is
    /// the table's spectral weight broadened by the same η.
    pub reconstruction_error: f64,
    /// Same, against the unbroadened table values.
    pub direct_error: f64,
}

impl BathDiscretization {
    pub fn n_modes(&self) -> usize {
        self.energies.len()
    }

    /// Bath from explicit modes (no reconstruction check).
    pub fn from_modes(energies: Vec<f64>, couplings: Vec<f64>) -> Result<Self> {
        if energies.len() != couplings.len() {
            return Err(Error::InvalidParameter("bath energies and couplings differ in length".into()));
        }
        if couplings.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidParameter("bath couplings must be real and non-negative".into()));
        }
        Ok(BathDiscretization {
            energies,
            couplings,
            spacing: 0.0,
            reconstruction_error: 0.0,
            direct_error: 0.0,
        })
    }

    /// `Σ_j h_j² / (z − ε_j)`.
    pub fn self_energy(&self, z: C64) -> C64 {
        self.energies
            .iter()
            .zip(&self.couplings)
            .map(|(e, h)| C64::new(h * h, 0.0) / (z - e))
            .sum()
    }
}

/// Star discretization of `tbl` with `n_modes` modes.
///
/// The support (nodes where `|Im Σ|` exceeds `1e-6·δ_dis`, plus one node on
/// either side) is cut into `n_modes` equal cells with a mode at each
/// midpoint. With `ρ(ε) = −Im Σ(ε)/π`, the cell mass `B_j = ∫_cell ρ` and the
/// hat-function mass `H_j = ∫ρ φ_j`, the coupling is `h_j² = 2B_j − H_j`
/// (clipped at zero), which is `ρ(ε_j) Δε` up to the local curvature of ρ.
///
/// Point sampling `h² = ρ(ε_j) Δε` only gets Re Σ below the band right to
/// O(Δε^{3/2}) because of the square-root band edge. Box and hat weights fix
/// the edge but leave a bulk error of `Δε²/24 ∫ρ f''` and twice that for a
/// smooth test function f, which at a few hundred modes still moves a lower
/// polariton sitting just below the band by a sizeable fraction of its width.
/// The combination cancels that term.
///
/// What is left is the interpolation error of the table near the edge, so
/// the table should come from a refined grid (see [`GridSpec::refined`]).
///
/// [`GridSpec::refined`]: crate::selfenergy::GridSpec::refined
pub fn fit_bath(tbl: &SelfEnergyTable, n_modes: usize) -> Result<BathDiscretization> {
    if n_modes < 50 {
        return Err(Error::InvalidParameter(format!(
            "need at least 50 bath modes, got {n_modes}"
        )));
    }
    let thr = SUPPORT_THRESHOLD * tbl.delta_dis;
    let inside: Vec<usize> = (0..tbl.omega.len())
        .filter(|&i| tbl.delta_dis > 0.0 && tbl.sigma_im[i].abs() > thr)
        .collect();
    let (lo, hi) = match (inside.first(), inside.last()) {
        (Some(&a), Some(&b)) => {
            // At a hard band edge Im Σ steps to zero on the node itself.
            let a = match tbl.band_edge {
                Some(e) if tbl.omega[a] == e => a,
                _ => a.saturating_sub(1),
            };
            let b = (b + 1).min(tbl.omega.len() - 1);
            (tbl.omega[a], tbl.omega[b])
        }
        _ => (tbl.omega_min(), tbl.omega_max()),
    };
    let de = (hi - lo) / n_modes as f64;
    let energies: Vec<f64> = (0..n_modes).map(|j| lo + (j as f64 + 0.5) * de).collect();
    let couplings: Vec<f64> = energies
        .par_iter()
        .map(|&e| cell_weight(tbl, e, de, lo, hi).max(0.0).sqrt())
        .collect();
    let mut bath = BathDiscretization {
        energies,
        couplings,
        spacing: de,
        reconstruction_error: 0.0,
        direct_error: 0.0,
    };
    if tbl.delta_dis > 0.0 {
        let (smoothed, direct) = reconstruction_errors(tbl, &bath);
        bath.reconstruction_error = smoothed;
        bath.direct_error = direct;
        if smoothed > MAX_RECONSTRUCTION_ERROR {
            return Err(Error::BathReconstruction {
                error: smoothed,
                n_modes,
            });
        }
    }
    Ok(bath)
}

/// `2B − H` for the cell of width `de` centred on `e`. Beyond the outermost
/// nodes the hat is flat, so the hats still sum to one on `[lo, hi]`.
fn cell_weight(tbl: &SelfEnergyTable, e: f64, de: f64, lo: f64, hi: f64) -> f64 {
    let first = e - de < lo;
    let last = e + de > hi;
    let phi = |x: f64| {
        if (first && x < e) || (last && x > e) {
            1.0
        } else {
            (1.0 - (x - e).abs() / de).max(0.0)
        }
    };
    let (a, b) = ((e - de).max(lo), (e + de).min(hi));
    let br: Vec<f64> = tbl
        .omega
        .iter()
        .copied()
        .chain(tbl.band_edge)
        .chain([e - 0.5 * de, e, e + 0.5 * de])
        .filter(|w| *w > a && *w < b)
        .collect();
    let kernel = |x: f64| {
        let own = if (x - e).abs() <= 0.5 * de { 2.0 } else { 0.0 };
        -tbl.eval(x).im / PI * (own - phi(x))
    };
    integrate_real(kernel, a, b, &br, QuadOptions::tol(1e-15, 1e-11)).0
}

fn reconstruction_errors(tbl: &SelfEnergyTable, bath: &BathDiscretization) -> (f64, f64) {
    let eta = bath.spacing;
    let (a, b) = (tbl.omega_min(), tbl.omega_max());
    let fixed: Vec<f64> = tbl.band_edge.into_iter().chain([0.0]).collect();
    tbl.omega
        .par_iter()
        .map(|&w| {
            let z = C64::new(w, eta);
            let ours = bath.self_energy(z);
            // Table nodes are kinks of the interpolant; they only matter
            // where the Lorentzian is sharp.
            let mut br = fixed.clone();
            br.extend([w - eta, w, w + eta]);
            br.extend(tbl.omega.iter().copied().filter(|e| (e - w).abs() < 20.0 * eta));
            let reference = integrate(
                |e| C64::new(-tbl.eval(e).im / PI, 0.0) / (z - e),
                a,
                b,
                &br,
                QuadOptions::tol(1e-10, 1e-9),
            )
            .value;
            let direct = tbl.eval(w);
            (
                (ours - reference).norm() / tbl.delta_dis,
                (ours - direct).norm() / tbl.delta_dis,
            )
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)))
}

/// Quadratic part of the truncated model: one-excitation Hamiltonian, the
/// driven/detected cavity mode, and the mode carrying the contact term.
#[derive(Debug, Clone)]
pub struct OracleSystem {
    pub h: DMatrix<C64>,
    pub cavity: usize,
    pub interacting: usize,
    pub kappa: f64,
}

impl OracleSystem {
    /// Cavity (index 0), exciton (index 1) and bath modes (2..).
    pub fn polariton(params: &SystemParams, bath: &BathDiscretization) -> Result<Self> {
        params.validate()?;
        // Uncoupled modes never get populated and would only make A singular.
        let coupled: Vec<(f64, f64)> = bath
            .energies
            .iter()
            .zip(&bath.couplings)
            .filter(|(_, c)| **c != 0.0)
            .map(|(e, c)| (*e, *c))
            .collect();
        let n = 2 + coupled.len();
        let mut h = DMatrix::<C64>::zeros(n, n);
        h[(0, 0)] = C64::new(params.delta_c, -0.5 * params.kappa_c);
        h[(1, 1)] = C64::new(0.0, -0.5 * params.gamma_d);
        h[(0, 1)] = C64::new(params.g_c, 0.0);
        h[(1, 0)] = C64::new(params.g_c, 0.0);
        for (j, (e, c)) in coupled.iter().enumerate() {
            h[(2 + j, 2 + j)] = C64::new(*e, 0.0);
            h[(1, 2 + j)] = C64::new(*c, 0.0);
            h[(2 + j, 1)] = C64::new(*c, 0.0);
        }
        Ok(OracleSystem {
            h,
            cavity: 0,
            interacting: 1,
            kappa: params.kappa_c,
        })
    }

    /// A single lossy Kerr mode that is also the transmitting cavity.
    pub fn kerr(omega_m: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(OracleSystem {
            h: DMatrix::from_element(1, 1, C64::new(omega_m, -0.5 * gamma)),
            cavity: 0,
            interacting: 0,
            kappa: gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Fastest frequency in the rotating frame at `omega_l`.
    pub fn fastest_frequency(&self, omega_l: f64) -> f64 {
        let n = self.dim();
        let mut f = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    (self.h[(i, i)] - omega_l).norm()
                } else {
                    self.h[(i, j)].norm()
                };
                f = f.max(v);
            }
        }
        f.max(self.kappa)
    }

    fn resolvent_column(&self, omega: f64, col: usize) -> Result<DVector<C64>> {
        let n = self.dim();
        let a = DMatrix::<C64>::identity(n, n) * C64::new(omega, 0.0) - &self.h;
        let mut rhs = DVector::<C64>::zeros(n);
        rhs[col] = C64::new(1.0, 0.0);
        a.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("one-excitation system at omega = {omega}")))
    }
}

/// Transmission of the surrogate model from the one-excitation linear solve.
pub fn oracle_transmission(omega: f64, sys: &OracleSystem) -> Result<C64> {
    let psi = sys.resolvent_column(omega, sys.cavity)?;
    Ok(C64::new(0.0, 0.5 * sys.kappa) * psi[sys.cavity])
}

/// Weak-drive steady state, blocks normalized to unit drive and unit vacuum.
#[derive(Debug, Clone)]
pub struct TruncatedState {
    pub psi0: C64,
    pub psi1: DVector<C64>,
    /// Symmetric pair-amplitude matrix `X`.
    pub psi2: DMatrix<C64>,
    /// Solution `K` of `A K + K Aᵀ = E_xx`; `2K_xx` is the pair propagator.
    pub pair_kernel: C64,
}

impl TruncatedState {
    pub fn one_excitation_dim(&self) -> usize {
        self.psi1.len()
    }

    /// Number of independent symmetric pair amplitudes, n(n+1)/2.
    pub fn two_excitation_dim(&self) -> usize {
        let n = self.psi1.len();
        n * (n + 1) / 2
    }
}

/// Solves `R Y + Y Rᵀ = C` for upper-triangular `R`.
fn triangular_sylvester(r: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let n = r.nrows();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            let mut acc = c[(i, j)];
            for k in i + 1..n {
                acc -= r[(i, k)] * y[(k, j)];
            }
            for k in j + 1..n {
                acc -= y[(i, k)] * r[(j, k)];
            }
            let d = r[(i, i)] + r[(j, j)];
            if d.norm() < 1e-300 {
                return Err(Error::Singular("pair resonance on the real axis".into()));
            }
            y[(i, j)] = acc / d;
        }
    }
    Ok(y)
}

/// Steady state of the system driven at `omega_l` with contact strength `u`.
pub fn steady_state(sys: &OracleSystem, u: f64, omega_l: f64) -> Result<TruncatedState> {
    let n = sys.dim();
    let a = DMatrix::<C64>::identity(n, n) * C64::new(omega_l, 0.0) - &sys.h;
    let psi1 = sys.resolvent_column(omega_l, sys.cavity)?;

    let schur = nalgebra::Schur::try_new(a.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Singular("Schur decomposition did not converge".into()))?;
    let (q, mut r) = schur.unpack();
    for j in 0..n {
        for i in j + 1..n {
            r[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    let qh = q.adjoint();
    let qbar = q.map(|v| v.conj());
    let solve = |rhs: &DMatrix<C64>| -> Result<DMatrix<C64>> {
        let c = &qh * rhs * &qbar;
        let y = triangular_sylvester(&r, &c)?;
        Ok(&q * y * q.transpose())
    };

    let mut s = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        s[(sys.cavity, i)] += psi1[i] / SQRT_2;
        s[(i, sys.cavity)] += psi1[i] / SQRT_2;
    }
    let x0 = solve(&s)?;
    let mut exx = DMatrix::<C64>::zeros(n, n);
    let ix = sys.interacting;
    exx[(ix, ix)] = C64::new(1.0, 0.0);
    let k = solve(&exx)?;
    let denom = 1.0 - k[(ix, ix)] * (2.0 * u);
    let x_xx = x0[(ix, ix)] / denom;
    let x = x0 + k.clone() * (x_xx * 2.0 * u);
    Ok(TruncatedState {
        psi0: C64::new(1.0, 0.0),
        psi1,
        psi2: x,
        pair_kernel: k[(ix, ix)],
    })
}

/// Time-stepping controls.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleOptions {
    /// Integrator step (ħ/meV). Defaults to `0.1/ω_fast`, refined so that it
    /// divides the output step by a power of two.
    pub step: Option<f64>,
}

/// g²(τ) of the truncated model driven at `omega_l`.
pub fn g2_oracle(
    tau: &TauGrid,
    sys: &OracleSystem,
    u: f64,
    omega_l: f64,
    opts: &OracleOptions,
) -> Result<TwoPhotonResult> {
    let st = steady_state(sys, u, omega_l)?;
    let c = sys.cavity;
    let n = sys.dim();
    let pc = st.psi1[c];
    if pc.norm() == 0.0 {
        return Err(Error::DarkDrive {
            omega_l,
            transmission: 0.0,
        });
    }
    // Conditional one-excitation amplitude minus its steady value.
    let mut d = DVector::<C64>::zeros(n);
    for i in 0..n {
        d[i] = st.psi2[(c, i)] * SQRT_2 - pc * st.psi1[i];
    }

    let fast = sys.fastest_frequency(omega_l);
    let dt_out = tau.step();
    let bound = 0.1 / fast;
    if let Some(s) = opts.step {
        if s > PI / fast {
            return Err(Error::Nyquist { step: s, limit: PI / fast });
        }
    }
    let target = opts.step.unwrap_or(bound).min(dt_out);
    let levels = (dt_out / target).log2().ceil().max(0.0) as u32;
    let delta = dt_out / 2f64.powi(levels as i32);
    let gen = (DMatrix::<C64>::identity(n, n) * C64::new(omega_l, 0.0) - &sys.h) * C64::new(0.0, delta);
    let mut prop = gen.exp();
    for _ in 0..levels {
        prop = &prop * &prop;
    }

    let pc2 = pc * pc;
    let norm = pc2.norm_sqr();
    let mut g2 = Vec::with_capacity(tau.n);
    let mut psi_c = Vec::with_capacity(tau.n);
    for k in 0..tau.n {
        if k > 0 {
            d = &prop * d;
        }
        let amp = pc2 + d[c];
        psi_c.push(d[c]);
        g2.push(amp.norm_sqr() / norm);
    }
    Ok(TwoPhotonResult {
        tau: tau.points(),
        g2,
        omega_l,
        t_at_drive: C64::new(0.0, 0.5 * sys.kappa) * pc,
        chi_at_2wl: st.pair_kernel * 2.0,
        t_matrix_at_2wl: C64::new(u, 0.0) / (1.0 - st.pair_kernel * (2.0 * u)),
        psi_c,
        normalization: f64::NAN,
        gamma_lp: None,
        fft_points: 0,
        fft_half_window: 0.0,
    })
}

/// Occupation-number basis with at most two excitations, and the dense
/// Fock-space Hamiltonian built from explicit ladder operators.
///
/// Used only for small systems, as an independent check of the
/// matrix-equation route.
pub mod fock {
    use super::*;

    /// Basis states: vacuum, then `a_i†|0⟩`, then pairs `i ≤ j`.
    #[derive(Debug, Clone)]
    pub struct FockBasis {
        pub n_modes: usize,
        pub states: Vec<Vec<u8>>,
    }

    impl FockBasis {
        pub fn new(n_modes: usize) -> Self {
            let mut states = vec![vec![0u8; n_modes]];
            for i in 0..n_modes {
                let mut s = vec![0u8; n_modes];
                s[i] = 1;
                states.push(s);
            }
            for i in 0..n_modes {
                for j in i..n_modes {
                    let mut s = vec![0u8; n_modes];
                    s[i] += 1;
                    s[j] += 1;
                    states.push(s);
                }
            }
            FockBasis { n_modes, states }
        }

        pub fn dim(&self) -> usize {
            self.states.len()
        }

        pub fn index(&self, occ: &[u8]) -> Option<usize> {
            self.states.iter().position(|s| s.as_slice() == occ)
        }

        /// Matrix of the annihilator `a_k` in this truncated basis.
        pub fn annihilator(&self, k: usize) -> DMatrix<C64> {
            let d = self.dim();
            let mut m = DMatrix::<C64>::zeros(d, d);
            for (col, s) in self.states.iter().enumerate() {
                if s[k] == 0 {
                    continue;
                }
                let mut t = s.clone();
                t[k] -= 1;
                let row = self.index(&t).expect("lowered state in basis");
                m[(row, col)] = C64::new((s[k] as f64).sqrt(), 0.0);
            }
            m
        }

        /// Excitation number of each basis state.
        pub fn excitations(&self, i: usize) -> u8 {
            self.states[i].iter().sum()
        }
    }

    /// `Σ h_kl a_k† a_l + U a_x†a_x†a_x a_x − ω_L N + Ω (a_c + a_c†)`.
    pub fn hamiltonian(
        basis: &FockBasis,
        sys: &OracleSystem,
        u: f64,
        omega_l: f64,
        drive: f64,
    ) -> DMatrix<C64> {
        let n = sys.dim();
        let ops: Vec<DMatrix<C64>> = (0..n).map(|k| basis.annihilator(k)).collect();
        let d = basis.dim();
        let mut h = DMatrix::<C64>::zeros(d, d);
        for k in 0..n {
            for l in 0..n {
                let mut hkl = sys.h[(k, l)];
                if k == l {
                    hkl -= omega_l;
                }
                if hkl != C64::new(0.0, 0.0) {
                    h += ops[k].adjoint() * &ops[l] * hkl;
                }
            }
        }
        let ax = &ops[sys.interacting];
        h += ax.adjoint() * ax.adjoint() * ax * ax * C64::new(u, 0.0);
        let ac = &ops[sys.cavity];
        h += (ac + ac.adjoint()) * C64::new(drive, 0.0);
        h
    }

    /// Weak-drive steady state solved block by block in the Fock basis:
    /// returns the full amplitude vector with unit vacuum and unit drive.
    pub fn weak_drive_state(basis: &FockBasis, sys: &OracleSystem, u: f64, omega_l: f64) -> Result<DVector<C64>> {
        let h0 = hamiltonian(basis, sys, u, omega_l, 0.0);
        let ac = basis.annihilator(sys.cavity);
        let raise = ac.adjoint();
        let blocks: Vec<Vec<usize>> = (0..=2u8)
            .map(|m| (0..basis.dim()).filter(|&i| basis.excitations(i) == m).collect())
            .collect();
        let mut psi = DVector::<C64>::zeros(basis.dim());
        psi[0] = C64::new(1.0, 0.0);
        for idx in &blocks[1..] {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| h0[(idx[i], idx[j])]);
            let src = &raise * &psi;
            let rhs = DVector::from_fn(idx.len(), |i, _| -src[idx[i]]);
            let sol = sub
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("Fock block".into()))?;
            for (i, &k) in idx.iter().enumerate() {
                psi[k] = sol[i];
            }
        }
        Ok(psi)
    }

    /// `⟨a†a†aa⟩ / ⟨a†a⟩²` of the cavity mode for a state vector.
    pub fn g2_zero(basis: &FockBasis, sys: &OracleSystem, psi: &DVector<C64>) -> f64 {
        let ac = basis.annihilator(sys.cavity);
        let one = &ac * psi;
        let two = &ac * &one;
        two.norm_squared() / one.norm_squared().powi(2)
    }
}

#[cfg(test)]
mod tests {
    use super::fock::*;
    use super::*;
    use crate::linear::transmission;
    use crate::selfenergy::{
        born_self_energy, scba_self_energy, DisorderParams, ScbaOptions, SIGMA_FOR_UNIT_DELTA_DIS,
    };
    use crate::twophoton::g2_markovian_kerr;
    use approx::assert_relative_eq;

    fn small_bath() -> BathDiscretization {
        BathDiscretization::from_modes(vec![-0.5, 0.3, 1.1, 2.0], vec![0.2, 0.35, 0.1, 0.25]).unwrap()
    }

    fn test_params(u: f64) -> SystemParams {
        SystemParams::new(1.5, 0.4, 3.0, 0.05, u).unwrap()
    }

    #[test]
    fn empty_bath_matches_linear_response() {
        let p = test_params(0.0);
        let bath = BathDiscretization::from_modes(vec![0.0; 3], vec![0.0; 3]).unwrap();
        let sys = OracleSystem::polariton(&p, &bath).unwrap();
        for &w in &[-3.0, -0.6, 0.0, 0.2, 3.5] {
            let a = oracle_transmission(w, &sys).unwrap();
            let b = transmission(w, &p, None);
            assert!((a - b).norm() < 1e-10, "w={w}");
        }
        assert!(oracle_transmission(500.0, &sys).unwrap().norm() < 1e-3);
    }

    #[test]
    fn zero_table_gives_zero_couplings() {
        let w: Vec<f64> = (0..100).map(|i| -1.0 + 0.02 * i as f64).collect();
        let tbl = SelfEnergyTable::from_samples(w, vec![0.0; 100], vec![0.0; 100], 0.5, 0.5).unwrap();
        let bath = fit_bath(&tbl, 60).unwrap();
        assert!(bath.couplings.iter().all(|h| *h == 0.0));
        assert!(fit_bath(&tbl, 10).is_err());
    }

    #[test]
    fn born_bath_reconstruction() {
        let dp = DisorderParams::correlated(2.0 / PI).unwrap();
        let tbl = born_self_energy(&dp).unwrap();
        let bath = fit_bath(&tbl, 300).unwrap();
        assert!(bath.reconstruction_error < MAX_RECONSTRUCTION_ERROR);
        assert!(bath.couplings.iter().all(|h| *h >= 0.0));
    }

    #[test]
    fn refining_the_bath_does_not_hurt() {
        let dp = DisorderParams::correlated(SIGMA_FOR_UNIT_DELTA_DIS).unwrap();
        let tbl = scba_self_energy(&dp, &ScbaOptions::default()).unwrap();
        let errs: Vec<f64> = [150, 300, 600]
            .iter()
            .map(|&n| fit_bath(&tbl, n).unwrap().reconstruction_error)
            .collect();
        assert!(errs[1] <= errs[0] && errs[2] <= errs[1], "{errs:?}");
    }

    #[test]
    fn too_few_modes_reports_reconstruction_error() {
        // Spectral weight oscillating on about two mode spacings at n = 50.
        let w: Vec<f64> = (0..2001).map(|i| -1.0 + 1e-3 * i as f64).collect();
        let im: Vec<f64> = w
            .iter()
            .map(|x: &f64| if x.abs() < 0.9 { -(1.0 + (x * 80.0).cos()) } else { 0.0 })
            .collect();
        let tbl = SelfEnergyTable::from_samples(w, vec![0.0; 2001], im, 0.5, 0.5).unwrap();
        assert!(matches!(fit_bath(&tbl, 50), Err(Error::BathReconstruction { n_modes: 50, .. })));
        assert!(fit_bath(&tbl, 100).unwrap().reconstruction_error < MAX_RECONSTRUCTION_ERROR);
    }

    #[test]
    fn pair_state_shift_is_two_u() {
        let u = 0.37;
        let sys = OracleSystem {
            h: DMatrix::zeros(2, 2),
            cavity: 0,
            interacting: 1,
            kappa: 0.0,
        };
        let basis = FockBasis::new(2);
        let h = hamiltonian(&basis, &sys, u, 0.0, 0.0);
        let xx = basis.index(&[0, 2]).unwrap();
        let mut v = DVector::<C64>::zeros(basis.dim());
        v[xx] = C64::new(1.0, 0.0);
        let hv = &h * &v;
        assert_relative_eq!(hv[xx].re, 2.0 * u, epsilon = 1e-15);
        assert!((hv.clone() - v.clone() * hv[xx]).norm() < 1e-15);
        // A single exciton feels no interaction.
        let x = basis.index(&[0, 1]).unwrap();
        let mut v1 = DVector::<C64>::zeros(basis.dim());
        v1[x] = C64::new(1.0, 0.0);
        assert!((&h * &v1).norm() < 1e-15);
    }

    #[test]
    fn sylvester_route_matches_fock_space() {
        let p = test_params(0.3);
        let sys = OracleSystem::polariton(&p, &small_bath()).unwrap();
        let wl = -0.7;
        let st = steady_state(&sys, 0.3, wl).unwrap();
        let basis = FockBasis::new(sys.dim());
        let psi = weak_drive_state(&basis, &sys, 0.3, wl).unwrap();
        for i in 0..sys.dim() {
            let mut occ = vec![0u8; sys.dim()];
            occ[i] = 1;
            let k = basis.index(&occ).unwrap();
            assert!((psi[k] - st.psi1[i]).norm() < 1e-10, "{} vs {}", psi[k], st.psi1[i]);
        }
        for i in 0..sys.dim() {
            for j in i..sys.dim() {
                let mut occ = vec![0u8; sys.dim()];
                occ[i] += 1;
                occ[j] += 1;
                let k = basis.index(&occ).unwrap();
                let coeff = if i == j { st.psi2[(i, i)] } else { st.psi2[(i, j)] * SQRT_2 };
                assert!((psi[k] - coeff).norm() < 1e-10, "pair ({i},{j})");
            }
        }
        // Scale the blocks to a physically weak drive before taking moments.
        let eps = 1e-6f64;
        let weak = DVector::from_fn(basis.dim(), |i, _| psi[i] * eps.powi(basis.excitations(i) as i32));
        let tau = TauGrid::new(1.0, 2).unwrap();
        let r = g2_oracle(&tau, &sys, 0.3, wl, &OracleOptions::default()).unwrap();
        assert_relative_eq!(r.g2[0], g2_zero(&basis, &sys, &weak), max_relative = 1e-9);
    }

    #[test]
    fn kerr_anchor() {
        let gamma = 0.004;
        for &(delta, u) in &[(0.0, 0.02), (0.003, 0.01), (-0.01, 0.02)] {
            let sys = OracleSystem::kerr(0.0, gamma).unwrap();
            let tau = TauGrid::new(10.0, 3).unwrap();
            let r = g2_oracle(&tau, &sys, u, -delta, &OracleOptions::default()).unwrap();
            let exact = g2_markovian_kerr(delta, gamma, u);
            assert!((r.g2[0] - exact).abs() < 1e-6 * exact.max(1.0), "{} vs {exact}", r.g2[0]);
        }
    }

    #[test]
    fn no_interaction_gives_unit_g2() {
        let p = test_params(0.0);
        let sys = OracleSystem::polariton(&p, &small_bath()).unwrap();
        let tau = TauGrid::new(50.0, 101).unwrap();
        let r = g2_oracle(&tau, &sys, 0.0, -0.7, &OracleOptions::default()).unwrap();
        assert!(r.g2.iter().all(|g| (g - 1.0).abs() < 1e-8));
    }

    #[test]
    fn g2_relaxes_to_one() {
        let p = test_params(0.3);
        let sys = OracleSystem::polariton(&p, &BathDiscretization::from_modes(vec![], vec![]).unwrap()).unwrap();
        let tau = TauGrid::new(400.0, 201).unwrap();
        let r = g2_oracle(&tau, &sys, 0.3, -0.7, &OracleOptions::default()).unwrap();
        assert!((r.g2[200] - 1.0).abs() < 1e-6);
        assert!(r.g2.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn hermitian_evolution_conserves_norm() {
        let p = SystemParams::new(1.5, 1e-300, 3.0, 0.0, 0.4).unwrap();
        let mut sys = OracleSystem::polariton(&p, &small_bath()).unwrap();
        sys.h[(0, 0)] = C64::new(3.0, 0.0);
        let basis = FockBasis::new(sys.dim());
        let h = hamiltonian(&basis, &sys, 0.4, 0.0, 0.0);
        let t_end = 10.0 / 1.5;
        let steps = 64;
        let prop = (h * C64::new(0.0, -t_end / steps as f64)).exp();
        let mut v = DVector::from_fn(basis.dim(), |i, _| {
            if basis.excitations(i) == 0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos())
            }
        });
        let n0: Vec<f64> = (1..=2u8)
            .map(|m| (0..basis.dim()).filter(|&i| basis.excitations(i) == m).map(|i| v[i].norm_sqr()).sum())
            .collect();
        for _ in 0..steps {
            v = &prop * v;
        }
        for (m, n_start) in (1..=2u8).zip(n0) {
            let n_end: f64 = (0..basis.dim())
                .filter(|&i| basis.excitations(i) == m)
                .map(|i| v[i].norm_sqr())
                .sum();
            assert!((n_end - n_start).abs() < 1e-10 * n_start, "block {m}: {n_start} -> {n_end}");
        }
    }

    /// Dressed vacuum of the full truncated Hamiltonian at finite drive, by
    /// inverse iteration from the bare vacuum.
    fn finite_drive_g2(sys: &OracleSystem, u: f64, wl: f64, drive: f64) -> f64 {
        let basis = FockBasis::new(sys.dim());
        let h = hamiltonian(&basis, sys, u, wl, drive);
        let lu = h.clone().lu();
        let mut v = DVector::<C64>::zeros(basis.dim());
        v[0] = C64::new(1.0, 0.0);
        for _ in 0..50 {
            v = lu.solve(&v).unwrap();
            let s = v[0];
            v /= s;
        }
        g2_zero(&basis, sys, &v)
    }

    #[test]
    fn finite_drive_converges_to_weak_drive_limit() {
        let p = test_params(0.3);
        let sys = OracleSystem::polariton(&p, &small_bath()).unwrap();
        let wl = -0.7;
        let g_a = finite_drive_g2(&sys, 0.3, wl, 2e-3);
        let g_b = finite_drive_g2(&sys, 0.3, wl, 1e-3);
        assert!((g_a - g_b).abs() < 0.01 * g_b, "{g_a} vs {g_b}");
        let tau = TauGrid::new(1.0, 2).unwrap();
        let weak = g2_oracle(&tau, &sys, 0.3, wl, &OracleOptions::default()).unwrap().g2[0];
        assert!((g_b - weak).abs() < 0.01 * weak, "{g_b} vs {weak}");
    }

    #[test]
    fn nyquist_violation_rejected() {
        let sys = OracleSystem::polariton(&test_params(0.1), &small_bath()).unwrap();
        let tau = TauGrid::new(10.0, 11).unwrap();
        let opts = OracleOptions { step: Some(5.0) };
        assert!(matches!(g2_oracle(&tau, &sys, 0.1, -0.7, &opts), Err(Error::Nyquist { .. })));
    }

    #[test]
    fn step_refinement_is_converged() {
        let sys = OracleSystem::polariton(&test_params(0.3), &small_bath()).unwrap();
        let tau = TauGrid::new(20.0, 41).unwrap();
        let a = g2_oracle(&tau, &sys, 0.3, -0.7, &OracleOptions::default()).unwrap();
        let b = g2_oracle(&tau, &sys, 0.3, -0.7, &OracleOptions { step: Some(0.002) }).unwrap();
        for (x, y) in a.g2.iter().zip(&b.g2) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
