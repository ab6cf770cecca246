//! Weak-drive two-photon correlations from the two-photon scattering matrix.
//!
//! The contact interaction acts on a single bosonic mode `x` that is dressed
//! by quadratic couplings only, so the ladder sum is exact:
//!
//! ```text
//! χ(E)  = (i/π) ∫ dν G_xx(ν) G_xx(E − ν)
//! T(E)  = U / (1 − U χ(E))
//! S_c(ν) = −i C T(2ω_L) A(ω_L)² A(ν) A(2ω_L − ν),   A(ν) = √(κ_c/2) G_xc(ν)
//! ψ_c(τ) = (1/2π) ∫ dν e^{−i(ν − ω_L)τ} S_c(ν)
//! g²(τ)  = |t(ω_L)² + ψ_c(τ)|² / |t(ω_L)|⁴
//! ```
//!
//! `C = 2` follows from the single-mode Kerr limit; see `docs/two_photon.md`.

use std::fmt::Write as _;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linear::{green, lower_polariton_peak};
use crate::model::{Drive, SystemParams};
use crate::numerics::quad::{integrate, integrate_to_infinity, QuadOptions};
use crate::selfenergy::SelfEnergyTable;
use crate::units::tau_to_ps;
use crate::C64;

/// Normalization of the connected amplitude, fixed by the Kerr limit.
pub const CONNECTED_NORMALIZATION: f64 = 2.0;

/// Below this drive-point transmission g² is not computed.
pub const MIN_DRIVE_TRANSMISSION: f64 = 1e-6;

/// A spectral feature: centre and approximate half-width scale (meV).
#[derive(Debug, Clone, Copy)]
pub struct Feature {
    pub centre: f64,
    pub width: f64,
}

/// Linear response of a system whose interacting mode carries the
/// contact term.
pub trait ResponseModel: Sync {
    /// Retarded propagator of the interacting mode.
    fn g_xx(&self, nu: f64) -> C64;
    /// Amplitude for an excitation of the interacting mode at `nu` to leave
    /// through the output port (and, by reciprocity, to enter from the input).
    fn conversion(&self, nu: f64) -> C64;
    /// Single-photon transmission amplitude.
    fn transmission(&self, nu: f64) -> C64;
    /// Resonances of `g_xx`, used as quadrature breakpoints.
    fn features(&self) -> Vec<Feature>;
    /// Frequency scale setting the FFT window: the window spans
    /// `±factor·scale` around the drive.
    fn window_scale(&self) -> f64;
    /// Smallest relevant decay rate (meV), which sets the time window.
    fn slowest_rate(&self) -> f64;
    /// Range on which the model is tabulated, if any; breakpoints are added
    /// at its ends.
    fn tabulated_range(&self) -> Option<(f64, f64)> {
        None
    }
}

/// A single lossy Kerr mode at `omega_m` with energy decay rate `gamma`,
/// itself the transmitting cavity.
#[derive(Debug, Clone, Copy)]
pub struct KerrMode {
    pub omega_m: f64,
    pub gamma: f64,
}

impl KerrMode {
    pub fn new(omega_m: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !omega_m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Kerr mode needs gamma > 0, got {gamma}"
            )));
        }
        Ok(KerrMode { omega_m, gamma })
    }

    fn g(&self, nu: f64) -> C64 {
        C64::new(1.0, 0.0) / C64::new(nu - self.omega_m, 0.5 * self.gamma)
    }
}

impl ResponseModel for KerrMode {
    fn g_xx(&self, nu: f64) -> C64 {
        self.g(nu)
    }
    fn conversion(&self, nu: f64) -> C64 {
        self.g(nu) * (0.5 * self.gamma).sqrt()
    }
    fn transmission(&self, nu: f64) -> C64 {
        C64::new(0.0, 0.5 * self.gamma) * self.g(nu)
    }
    fn features(&self) -> Vec<Feature> {
        vec![Feature {
            centre: self.omega_m,
            width: 0.5 * self.gamma,
        }]
    }
    fn window_scale(&self) -> f64 {
        self.gamma
    }
    fn slowest_rate(&self) -> f64 {
        self.gamma
    }
}

/// Cavity-exciton model with optional disorder self-energy; the contact term
/// acts on the `k = 0` exciton.
#[derive(Debug, Clone, Copy)]
pub struct PolaritonModel<'a> {
    pub params: SystemParams,
    pub table: Option<&'a SelfEnergyTable>,
    lp: Feature,
    up: Feature,
}

impl<'a> PolaritonModel<'a> {
    pub fn new(params: SystemParams, table: Option<&'a SelfEnergyTable>) -> Result<Self> {
        params.validate()?;
        let pol = params.polaritons();
        let sig = |w: f64| table.map(|t| t.eval(w)).unwrap_or(C64::new(0.0, 0.0));
        // Quasi-particle positions including Re Σ.
        let solve = |start: f64, upper: bool| {
            let mut w = start;
            for _ in 0..200 {
                let e = sig(w).re;
                let d = params.delta_c;
                let root = ((d - e).powi(2) + 4.0 * params.g_c * params.g_c).sqrt();
                let next = 0.5 * (d + e + if upper { root } else { -root });
                if (next - w).abs() < 1e-13 {
                    return next;
                }
                w = next;
            }
            w
        };
        let w_lp = solve(pol.omega_lp, false);
        let w_up = solve(pol.omega_up, true);
        let width = |w: f64, x2: f64| {
            let c2 = 1.0 - x2;
            (0.5 * (c2 * params.kappa_c + x2 * (params.gamma_d - 2.0 * sig(w).im))).max(1e-9)
        };
        Ok(PolaritonModel {
            params,
            table,
            lp: Feature {
                centre: w_lp,
                width: width(w_lp, pol.x2_lp),
            },
            up: Feature {
                centre: w_up,
                width: width(w_up, pol.c2_lp),
            },
        })
    }
}

impl ResponseModel for PolaritonModel<'_> {
    fn g_xx(&self, nu: f64) -> C64 {
        green(nu, &self.params, self.table).xx
    }
    fn conversion(&self, nu: f64) -> C64 {
        green(nu, &self.params, self.table).xc * (0.5 * self.params.kappa_c).sqrt()
    }
    fn transmission(&self, nu: f64) -> C64 {
        crate::linear::transmission(nu, &self.params, self.table)
    }
    fn features(&self) -> Vec<Feature> {
        let mut f = vec![self.lp, self.up];
        if let Some(t) = self.table {
            f.push(Feature {
                centre: 0.0,
                width: t.delta_dis.max(1e-6),
            });
        }
        f
    }
    fn window_scale(&self) -> f64 {
        let p = &self.params;
        let shift = if p.delta_c != 0.0 { p.g_c * p.g_c / p.delta_c.abs() } else { p.g_c };
        let dis = self.table.map(|t| t.delta_dis).unwrap_or(0.0);
        p.kappa_c.max(shift).max(dis).max(p.gamma_d)
    }
    fn slowest_rate(&self) -> f64 {
        2.0 * self.lp.width.min(self.up.width)
    }
    fn tabulated_range(&self) -> Option<(f64, f64)> {
        self.table.map(|t| (t.omega_min(), t.omega_max()))
    }
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-11,
        max_intervals: 20_000,
    }
}

/// Pair propagator `χ(E) = (i/π) ∫ G_xx(ν) G_xx(E − ν) dν`.
///
/// The integrand is symmetric about `ν = E/2`, so only the upper half is
/// integrated: adaptively up to a cutoff beyond every feature, then to
/// infinity through a mapped variable. A tail above 1% of the total is an
/// error.
pub fn pair_bubble(e: f64, model: &dyn ResponseModel) -> Result<C64> {
    let mid = 0.5 * e;
    let feats = model.features();
    let mut breaks = Vec::new();
    let mut reach: f64 = 0.0;
    for f in &feats {
        for c in [f.centre, e - f.centre] {
            reach = reach.max((c - mid).abs());
            for k in [0.0, 1.0, 10.0, 100.0] {
                breaks.push(c - k * f.width);
                breaks.push(c + k * f.width);
            }
        }
    }
    if let Some((lo, hi)) = model.tabulated_range() {
        for c in [lo, hi, e - lo, e - hi] {
            breaks.push(c);
            reach = reach.max((c - mid).abs());
        }
    }
    let scale = model.window_scale();
    // The integrand falls off as 1/ν², so the tail beyond the cutoff is of
    // relative size ~ (reach + scale)/(cut − mid).
    let cut = mid + 1000.0 * (reach + scale);
    let f = |nu: f64| model.g_xx(nu) * model.g_xx(e - nu);
    let body = integrate(f, mid, cut, &breaks, quad_opts());
    let tail = integrate_to_infinity(f, cut, cut - mid, quad_opts());
    let total = (body.value + tail.value) * 2.0;
    if !body.converged || !tail.converged {
        return Err(Error::Quadrature {
            error: 2.0 * (body.error + tail.error),
        });
    }
    if tail.value.norm() * 2.0 > 0.01 * total.norm() {
        return Err(Error::TailTooLarge {
            tail: 2.0 * tail.value.norm(),
            total: total.norm(),
        });
    }
    Ok(C64::new(0.0, 1.0 / std::f64::consts::PI) * total)
}

/// `T(E) = U/(1 − Uχ(E))`.
pub fn t_matrix(e: f64, u: f64, model: &dyn ResponseModel) -> Result<C64> {
    if u == 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let chi = pair_bubble(e, model)?;
    Ok(t_from_chi(u, chi))
}

pub fn t_from_chi(u: f64, chi: C64) -> C64 {
    C64::new(u, 0.0) / (1.0 - chi * u)
}

/// Closed-form `g²(0)` of a weakly driven Kerr mode with pair shift `2U`,
/// detuning `delta = ω_mode − ω_L` and energy decay rate `gamma`.
pub fn g2_markovian_kerr(delta: f64, gamma: f64, u: f64) -> f64 {
    let q = 0.25 * gamma * gamma;
    (delta * delta + q) / ((delta + u).powi(2) + q)
}

/// Uniform delay grid `τ_k = k·τ_max/(n − 1)` (units ħ/meV).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub tau_max: f64,
    pub n: usize,
}

impl TauGrid {
    pub fn new(tau_max: f64, n: usize) -> Result<Self> {
        if !(tau_max > 0.0 && tau_max.is_finite()) || n < 2 {
            return Err(Error::InvalidParameter(format!(
                "tau grid needs tau_max > 0 and n >= 2 (got {tau_max}, {n})"
            )));
        }
        Ok(TauGrid { tau_max, n })
    }

    /// 2048 points over `[0, 20/Γ]`.
    pub fn default_for(gamma_lp: f64) -> Result<Self> {
        Self::new(20.0 / gamma_lp, 2048)
    }

    pub fn step(&self) -> f64 {
        self.tau_max / (self.n - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n).map(|k| k as f64 * h).collect()
    }
}

/// FFT controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftOptions {
    /// Half-window in units of the model's window scale.
    pub window_factor: f64,
    /// Extra time span beyond `τ_max`, in units of 1/(slowest rate), that the
    /// FFT period must cover.
    pub guard_decays: f64,
}

impl Default for FftOptions {
    fn default() -> Self {
        FftOptions {
            window_factor: 40.0,
            guard_decays: 20.0,
        }
    }
}

/// g²(τ) together with its intermediates.
#[derive(Debug, Clone)]
pub struct TwoPhotonResult {
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub omega_l: f64,
    pub t_at_drive: C64,
    pub chi_at_2wl: C64,
    pub t_matrix_at_2wl: C64,
    pub psi_c: Vec<C64>,
    pub normalization: f64,
    /// Linewidth used for the default delay grid (meV), if known.
    pub gamma_lp: Option<f64>,
    pub fft_points: usize,
    pub fft_half_window: f64,
}

impl TwoPhotonResult {
    /// CSV with columns `tau_hbar_per_meV,tau_ps,g2`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_hbar_per_meV,tau_ps,g2\n");
        for (t, g) in self.tau.iter().zip(&self.g2) {
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e}", t, tau_to_ps(*t), g);
        }
        s
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "omega_L_meV": self.omega_l,
            "t_at_drive": [self.t_at_drive.re, self.t_at_drive.im],
            "transmission_at_drive": self.t_at_drive.norm_sqr(),
            "chi_at_2wL_per_meV": [self.chi_at_2wl.re, self.chi_at_2wl.im],
            "T_matrix_at_2wL_meV": [self.t_matrix_at_2wl.re, self.t_matrix_at_2wl.im],
            "normalization_C": self.normalization,
            "gamma_lp_meV": self.gamma_lp,
            "g2_at_0": self.g2.first(),
            "fft_points": self.fft_points,
            "fft_half_window_meV": self.fft_half_window,
        })
    }
}

/// g²(τ) for a drive at `omega_l` on the delay grid `tau`.
pub fn g2_curve(
    model: &dyn ResponseModel,
    u: f64,
    omega_l: f64,
    tau: &TauGrid,
    opts: &FftOptions,
) -> Result<TwoPhotonResult> {
    if !(u >= 0.0) {
        return Err(Error::InvalidParameter(format!("U must be >= 0, got {u}")));
    }
    let t_l = model.transmission(omega_l);
    if t_l.norm_sqr() < MIN_DRIVE_TRANSMISSION {
        return Err(Error::DarkDrive {
            omega_l,
            transmission: t_l.norm_sqr(),
        });
    }
    let e = 2.0 * omega_l;
    let (chi, tm) = if u == 0.0 {
        (C64::new(0.0, 0.0), C64::new(0.0, 0.0))
    } else {
        let chi = pair_bubble(e, model)?;
        (chi, t_from_chi(u, chi))
    };
    let (psi, n_fft, half) = if u == 0.0 {
        (vec![C64::new(0.0, 0.0); tau.n], 0, 0.0)
    } else {
        let a_l = model.conversion(omega_l);
        let pref = C64::new(0.0, -CONNECTED_NORMALIZATION) * tm * a_l * a_l;
        let (kernel, n_fft, half) = pair_kernel_transform(model, omega_l, tau, opts)?;
        (kernel.into_iter().map(|k| pref * k).collect(), n_fft, half)
    };
    let t2 = t_l * t_l;
    let t4 = t2.norm_sqr();
    let g2 = psi.iter().map(|p| (t2 + p).norm_sqr() / t4).collect();
    Ok(TwoPhotonResult {
        tau: tau.points(),
        g2,
        omega_l,
        t_at_drive: t_l,
        chi_at_2wl: chi,
        t_matrix_at_2wl: tm,
        psi_c: psi,
        normalization: CONNECTED_NORMALIZATION,
        gamma_lp: None,
        fft_points: n_fft,
        fft_half_window: half,
    })
}

/// `(1/2π) ∫ dμ e^{−iμτ} A(ω_L + μ) A(ω_L − μ)` on the delay grid.
///
/// The window width is rounded up so that the output delays fall exactly on
/// FFT nodes. A Lorentzian matching the kernel at the window edges is removed
/// before the transform and added back analytically, which takes care of the
/// `1/μ²` tail of a bare Kerr mode.
fn pair_kernel_transform(
    model: &dyn ResponseModel,
    omega_l: f64,
    tau: &TauGrid,
    opts: &FftOptions,
) -> Result<(Vec<C64>, usize, f64)> {
    use std::f64::consts::PI;
    let min_width = 2.0 * opts.window_factor * model.window_scale();
    let dt_out = tau.step();
    let stride = (min_width * dt_out / (2.0 * PI)).ceil().max(1.0) as usize;
    let width = 2.0 * PI * stride as f64 / dt_out;
    let dt = dt_out / stride as f64;
    let span = tau.tau_max + opts.guard_decays / model.slowest_rate();
    let n = ((span / dt).ceil() as usize).max((tau.n - 1) * stride + 1).next_power_of_two();
    let dmu = width / n as f64;
    let half = 0.5 * width;

    // a[j] = A(ω_L + μ_j), μ_j = (j − n/2)·dμ, j = 0..=n. The product kernel
    // pairs μ_j with −μ_j = μ_{n−j}.
    let a: Vec<C64> = (0..=n)
        .into_par_iter()
        .map(|j| model.conversion(omega_l + (j as f64 - (n / 2) as f64) * dmu))
        .collect();
    let kernel = |j: usize| a[j] * a[n - j];
    let m_edge = (n / 2) as f64 * dmu;
    let c = 0.5 * (kernel(0) + kernel(n)) * m_edge * m_edge;
    let lor_a = m_edge / 20.0;
    let mut buf: Vec<C64> = (0..n)
        .map(|j| {
            let mu = (j as f64 - (n / 2) as f64) * dmu;
            kernel(j) - c / (mu * mu + lor_a * lor_a)
        })
        .collect();
    let peak = (0..n).map(|j| kernel(j).norm()).fold(0.0, f64::max);
    let edge_resid = buf[0].norm().max((kernel(n) - c / (m_edge * m_edge + lor_a * lor_a)).norm());
    // For a 1/μ⁴ remainder, ∫_M^∞ ≈ f(M)·M/3 on each side.
    let tail = 2.0 * edge_resid * m_edge / 3.0;
    let integral_scale = peak * model.slowest_rate().max(dmu);
    if tail > 0.01 * integral_scale {
        return Err(Error::TailTooLarge {
            tail,
            total: integral_scale,
        });
    }

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let out = (0..tau.n)
        .map(|k| {
            let idx = k * stride;
            let sign = if idx.is_multiple_of(2) { 1.0 } else { -1.0 };
            let t = idx as f64 * dt;
            buf[idx] * (sign * dmu / (2.0 * PI)) + c / (2.0 * lor_a) * (-lor_a * t).exp()
        })
        .collect();
    Ok((out, n, half))
}

/// Drive frequency and linewidth for the polariton model.
pub fn resolve_drive(params: &SystemParams, table: Option<&SelfEnergyTable>) -> Result<(f64, f64)> {
    let peak = lower_polariton_peak(params, table)?;
    let gamma = peak.fwhm.ok_or_else(|| {
        Error::NoResonance("lower-polariton half maximum not found".into())
    })?;
    let w = match params.drive {
        Drive::At(w) => w,
        Drive::LowerPolaritonPeak => peak.omega_peak,
        Drive::LowerPolaritonPole => params.polaritons().omega_lp,
    };
    Ok((w, gamma))
}

/// g²(τ) of the polariton model with the drive taken from `params.drive`.
/// Without an explicit grid, 2048 delays over `[0, 20/Γ_LP]` are used, with
/// Γ_LP the measured width of the lower-polariton line.
pub fn g2_polariton(
    params: &SystemParams,
    table: Option<&SelfEnergyTable>,
    tau: Option<TauGrid>,
    opts: &FftOptions,
) -> Result<TwoPhotonResult> {
    let (w, gamma) = resolve_drive(params, table)?;
    let tau = match tau {
        Some(t) => t,
        None => TauGrid::default_for(gamma)?,
    };
    let model = PolaritonModel::new(*params, table)?;
    let mut r = g2_curve(&model, params.u_xx, w, &tau, opts)?;
    r.gamma_lp = Some(gamma);
    Ok(r)
}
