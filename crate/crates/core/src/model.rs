//! Two-mode cavity-exciton model.
//!
//! The bare `k = 0` exciton defines the zero of energy. The cavity sits at
//! `delta_c` above it and the two are coupled with strength `g_c`. In the
//! single-excitation sector the coherent part of the problem is the 2×2
//! matrix `[[delta_c, g_c], [g_c, 0]]`; losses and the disorder self-energy
//! are added by the [`crate::linear`] module.

use crate::error::{Error, Result};
use crate::units::{Micrometers, HBAR_C_MEV_UM};

/// Where the weak probe laser sits.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum Drive {
    /// Fixed drive frequency relative to the bare exciton (meV).
    At(f64),
    /// Numerically located lower-polariton transmission maximum, including
    /// the shift from the real part of the disorder self-energy.
    #[default]
    LowerPolaritonPeak,
    /// Lower-polariton eigenvalue of the bare 2×2 model.
    LowerPolaritonPole,
}


/// Physical parameters of the cavity-exciton model, all in meV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Exciton-cavity coupling.
    pub g_c: f64,
    /// Cavity energy decay rate κ_c (total, both mirrors).
    pub kappa_c: f64,
    /// Cavity-exciton detuning Δ_c = ω_c − ω_exc(0).
    pub delta_c: f64,
    /// Markovian exciton broadening γ_d = γ_nr + γ_deph.
    pub gamma_d: f64,
    /// Contact interaction U_{x-x}.
    pub u_xx: f64,
    pub drive: Drive,
}

impl SystemParams {
    pub fn new(g_c: f64, kappa_c: f64, delta_c: f64, gamma_d: f64, u_xx: f64) -> Result<Self> {
        let p = SystemParams {
            g_c,
            kappa_c,
            delta_c,
            gamma_d,
            u_xx,
            drive: Drive::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_drive(mut self, drive: Drive) -> Self {
        self.drive = drive;
        self
    }

    pub fn with_gamma_d(mut self, gamma_d: f64) -> Self {
        self.gamma_d = gamma_d;
        self
    }

    pub fn with_u(mut self, u_xx: f64) -> Self {
        self.u_xx = u_xx;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.g_c, self.kappa_c, self.delta_c, self.gamma_d, self.u_xx]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite system parameter".into()));
        }
        if self.kappa_c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kappa_c must be positive, got {}",
                self.kappa_c
            )));
        }
        if self.g_c < 0.0 || self.gamma_d < 0.0 || self.u_xx < 0.0 {
            return Err(Error::InvalidParameter(
                "g_c, gamma_d and u_xx must be non-negative".into(),
            ));
        }
        if let Drive::At(w) = self.drive {
            if !w.is_finite() {
                return Err(Error::InvalidParameter("non-finite drive frequency".into()));
            }
        }
        Ok(())
    }

    /// Polariton data of the coherent 2×2 problem.
    pub fn polaritons(&self) -> PolaritonData {
        polariton_data(self)
    }
}

/// Eigen-data of the lossless two-mode problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolaritonData {
    pub omega_lp: f64,
    pub omega_up: f64,
    /// Exciton weight |X|² of the lower polariton.
    pub x2_lp: f64,
    /// Photon weight |C|² = 1 − |X|² of the lower polariton.
    pub c2_lp: f64,
    /// Leading-order linewidth κ_c g_c²/Δ_c²; `None` at zero detuning.
    pub gamma_lp_pert: Option<f64>,
}

impl PolaritonData {
    /// Radiative width of the lower polariton from its photon weight.
    pub fn gamma_lp_exact(&self, kappa_c: f64) -> f64 {
        kappa_c * self.c2_lp
    }
}

/// Diagonalizes `[[Δ_c, g_c], [g_c, 0]]`.
pub fn polariton_data(params: &SystemParams) -> PolaritonData {
    let d = params.delta_c;
    let g = params.g_c;
    let split = (d * d + 4.0 * g * g).sqrt();
    // (d - split)/2 loses precision for g << d; use the product of roots instead.
    let omega_up = 0.5 * (d + split);
    let omega_lp = if omega_up != 0.0 && d >= 0.0 {
        -g * g / omega_up
    } else {
        0.5 * (d - split)
    };
    let x2_lp = if split > 0.0 { 0.5 * (1.0 + d / split) } else { 0.5 };
    let gamma_lp_pert = if d != 0.0 {
        Some(params.kappa_c * g * g / (d * d))
    } else {
        None
    };
    PolaritonData {
        omega_lp,
        omega_up,
        x2_lp,
        c2_lp: 1.0 - x2_lp,
        gamma_lp_pert,
    }
}

/// Coupling of a 2D exciton to the fundamental mode of a planar cavity of
/// length `l_z`, from its free-space radiative rate:
/// `g_c = sqrt(Γ_rad · c / L_z)`, returned in meV.
pub fn g_c_from_radiative(gamma_rad_mev: f64, l_z: Micrometers) -> Result<f64> {
    if !(gamma_rad_mev > 0.0) || !(l_z.0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma_rad and L_z must be positive (got {gamma_rad_mev} meV, {} um)",
            l_z.0
        )));
    }
    // ħ c / L_z is the cavity round-trip energy scale in meV.
    Ok((gamma_rad_mev * HBAR_C_MEV_UM / l_z.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    fn params(g: f64, d: f64) -> SystemParams {
        SystemParams::new(g, 0.1, d, 0.0, 0.0).unwrap()
    }

    #[test]
    fn decoupled_limit() {
        let p = polariton_data(&params(0.0, 100.0));
        assert_eq!(p.omega_lp, 0.0);
        assert_eq!(p.x2_lp, 1.0);
        assert_eq!(p.omega_up, 100.0);
    }

    #[test]
    fn resonant_splitting_is_two_g() {
        let p = polariton_data(&params(20.0, 0.0));
        assert_relative_eq!(p.omega_up - p.omega_lp, 40.0, epsilon = 1e-12);
        assert!(p.gamma_lp_pert.is_none());
        assert_relative_eq!(p.x2_lp, 0.5);
    }

    #[test]
    fn detuned_lower_polariton_matches_generic_eigensolver() {
        let sp = params(20.0, 100.0);
        let p = polariton_data(&sp);
        assert_relative_eq!(p.omega_lp, (100.0 - 11600f64.sqrt()) / 2.0, epsilon = 1e-12);
        assert!((p.omega_lp + 3.8516).abs() < 1e-4);
        assert!((p.x2_lp - 0.9642).abs() < 1e-4);
        assert_relative_eq!(p.gamma_lp_pert.unwrap(), 0.1 * 0.04, epsilon = 1e-15);

        let m = Matrix2::new(100.0, 20.0, 20.0, 0.0);
        let eig = m.symmetric_eigen();
        let (i_lp, i_up) = if eig.eigenvalues[0] < eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        assert_relative_eq!(eig.eigenvalues[i_lp], p.omega_lp, epsilon = 1e-10);
        assert_relative_eq!(eig.eigenvalues[i_up], p.omega_up, epsilon = 1e-10);
        // Exciton component is the second entry of the eigenvector.
        let x = eig.eigenvectors[(1, i_lp)];
        assert_relative_eq!(x * x, p.x2_lp, epsilon = 1e-10);
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(SystemParams::new(1.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(-1.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, 0.0, -0.1, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn radiative_coupling_scaling() {
        let g = g_c_from_radiative(0.002, Micrometers(1.0)).unwrap();
        let g4 = g_c_from_radiative(0.008, Micrometers(1.0)).unwrap();
        let g_l = g_c_from_radiative(0.002, Micrometers(4.0)).unwrap();
        assert_relative_eq!(g4, 2.0 * g, epsilon = 1e-14);
        assert_relative_eq!(g_l, 0.5 * g, epsilon = 1e-14);
        assert!(g_c_from_radiative(0.0, Micrometers(1.0)).is_err());
        assert!(g_c_from_radiative(1.0, Micrometers(-1.0)).is_err());
    }

    #[test]
    fn radiative_coupling_reference_value() {
        // From scripts/g_c_units.py, which works in SI units throughout.
        let g = g_c_from_radiative(0.002, Micrometers(1.0)).unwrap();
        assert_relative_eq!(g, 0.628_214_900_075_4, max_relative = 1e-9);
    }
}
