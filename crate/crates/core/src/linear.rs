//! Single-excitation Green's functions and cavity transmission.
//!
//! With losses and the exciton self-energy the inverse propagator is
//!
//! ```text
//! M(ω) = [[ω − Δ_c + iκ_c/2, −g_c], [−g_c, ω − Σ(ω) + iγ_d/2]]
//! ```
//!
//! and the symmetric two-port cavity transmits `t = i(κ_c/2) G_cc`, reflects
//! `r = t − 1`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::numerics::roots::{brent_max, brent_root};
use crate::selfenergy::SelfEnergyTable;
use crate::C64;

/// Components of `G = M⁻¹` at one frequency (meV⁻¹).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenMatrix {
    pub cc: C64,
    pub cx: C64,
    pub xc: C64,
    pub xx: C64,
}

fn sigma_at(w: f64, tbl: Option<&SelfEnergyTable>) -> C64 {
    tbl.map(|t| t.eval(w)).unwrap_or(C64::new(0.0, 0.0))
}

/// Dressed 2×2 propagator at real frequency `w`.
pub fn green(w: f64, params: &SystemParams, tbl: Option<&SelfEnergyTable>) -> GreenMatrix {
    green_with_sigma(w, params, sigma_at(w, tbl))
}

pub fn green_with_sigma(w: f64, params: &SystemParams, sigma: C64) -> GreenMatrix {
    let m11 = C64::new(w - params.delta_c, 0.5 * params.kappa_c);
    let m22 = C64::new(w, 0.5 * params.gamma_d) - sigma;
    let g = params.g_c;
    let det = m11 * m22 - g * g;
    let off = C64::new(g, 0.0) / det;
    GreenMatrix {
        cc: m22 / det,
        cx: off,
        xc: off,
        xx: m11 / det,
    }
}

/// Complex transmission amplitude.
pub fn transmission(w: f64, params: &SystemParams, tbl: Option<&SelfEnergyTable>) -> C64 {
    C64::new(0.0, 0.5 * params.kappa_c) * green(w, params, tbl).cc
}

/// Complex reflection amplitude `t − 1`.
pub fn reflection(w: f64, params: &SystemParams, tbl: Option<&SelfEnergyTable>) -> C64 {
    transmission(w, params, tbl) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    Peak,
    Dip,
}

/// A located transmission extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resonance {
    pub kind: Extremum,
    pub omega_peak: f64,
    pub peak_t: f64,
    /// Full width at half maximum for peaks, half-depth width for dips.
    pub fwhm: Option<f64>,
}

/// Transmission sampled on a grid together with its extrema.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    pub params: SystemParams,
    pub gamma_markov_override: Option<f64>,
    pub omega: Vec<f64>,
    pub t: Vec<C64>,
    pub big_t: Vec<f64>,
    pub big_r: Vec<f64>,
    pub resonances: Vec<Resonance>,
    /// Per-window extraction failures; the samples are still valid.
    pub warnings: Vec<String>,
}

impl SpectrumTable {
    /// Highest peak, if any.
    pub fn main_peak(&self) -> Option<&Resonance> {
        self.resonances
            .iter()
            .filter(|r| r.kind == Extremum::Peak)
            .max_by(|a, b| a.peak_t.total_cmp(&b.peak_t))
    }

    /// CSV with columns `omega_meV,re_t,im_t,T,R`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega_meV,re_t,im_t,T,R\n");
        for i in 0..self.omega.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.omega[i], self.t[i].re, self.t[i].im, self.big_t[i], self.big_r[i]
            );
        }
        s
    }

    /// Resonance metadata and the parameters that produced the curve.
    pub fn sidecar(&self) -> serde_json::Value {
        let p = &self.params;
        let pol = p.polaritons();
        serde_json::json!({
            "g_c_meV": p.g_c,
            "kappa_c_meV": p.kappa_c,
            "delta_c_meV": p.delta_c,
            "gamma_d_meV": p.gamma_d,
            "gamma_markov_override_meV": self.gamma_markov_override,
            "omega_lp_pole_meV": pol.omega_lp,
            "x2_lp": pol.x2_lp,
            "gamma_lp_exact_meV": pol.gamma_lp_exact(p.kappa_c),
            "gamma_lp_pert_meV": pol.gamma_lp_pert,
            "resonances": self.resonances,
            "warnings": self.warnings,
        })
    }
}

/// Samples the transmission on `grid` and extracts its extrema.
///
/// With `gamma_markov_override` the self-energy is dropped and `γ_d` is
/// replaced by the override. Extrema are seeded from the grid and refined on
/// the model itself, and widths are found by bracketing on the grid followed
/// by root finding.
pub fn spectrum(
    grid: &[f64],
    params: &SystemParams,
    tbl: Option<&SelfEnergyTable>,
    gamma_markov_override: Option<f64>,
) -> Result<SpectrumTable> {
    params.validate()?;
    if grid.len() < 3 || !grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter(
            "spectrum grid must be strictly increasing with at least 3 points".into(),
        ));
    }
    let (p, tbl) = match gamma_markov_override {
        Some(g) => {
            if !(g >= 0.0) {
                return Err(Error::InvalidParameter(format!("Markovian override must be >= 0, got {g}")));
            }
            (params.with_gamma_d(g), None)
        }
        None => (*params, tbl),
    };
    let t: Vec<C64> = grid.iter().map(|&w| transmission(w, &p, tbl)).collect();
    let big_t: Vec<f64> = t.iter().map(|v| v.norm_sqr()).collect();
    let big_r: Vec<f64> = t.iter().map(|v| (v - 1.0).norm_sqr()).collect();
    let tf = |w: f64| transmission(w, &p, tbl).norm_sqr();
    let (resonances, warnings) = find_extrema(grid, &big_t, &tf);
    Ok(SpectrumTable {
        params: p,
        gamma_markov_override,
        omega: grid.to_vec(),
        t,
        big_t,
        big_r,
        resonances,
        warnings,
    })
}

fn find_extrema<F: Fn(f64) -> f64>(x: &[f64], y: &[f64], f: &F) -> (Vec<Resonance>, Vec<String>) {
    let n = x.len();
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let is_max = |i: usize| y[i] > y[i - 1] && y[i] >= y[i + 1];
    let is_min = |i: usize| y[i] < y[i - 1] && y[i] <= y[i + 1];
    let maxima: Vec<usize> = (1..n - 1).filter(|&i| is_max(i)).collect();
    for i in 1..n - 1 {
        if is_max(i) {
            let (w, v) = brent_max(f, x[i - 1], x[i + 1], 1e-13 * (1.0 + x[i].abs()), 200);
            let level = 0.5 * v;
            let fwhm = crossing(x, y, f, i, level, -1)
                .zip(crossing(x, y, f, i, level, 1))
                .map(|(l, r)| r - l);
            if fwhm.is_none() {
                warnings.push(format!("peak at {w:.6} meV: half maximum not reached inside the grid"));
            }
            out.push(Resonance {
                kind: Extremum::Peak,
                omega_peak: w,
                peak_t: v,
                fwhm,
            });
        } else if is_min(i) {
            let (w, v) = brent_max(|t| -f(t), x[i - 1], x[i + 1], 1e-13 * (1.0 + x[i].abs()), 200);
            let v = -v;
            let left = maxima.iter().rev().find(|&&k| k < i).map(|&k| y[k]);
            let right = maxima.iter().find(|&&k| k > i).map(|&k| y[k]);
            let fwhm = match (left, right) {
                (Some(l), Some(r)) => {
                    let level = 0.5 * (v + l.min(r));
                    crossing(x, y, f, i, level, -1)
                        .zip(crossing(x, y, f, i, level, 1))
                        .map(|(a, b)| b - a)
                }
                _ => None,
            };
            out.push(Resonance {
                kind: Extremum::Dip,
                omega_peak: w,
                peak_t: v,
                fwhm,
            });
        }
    }
    (out, warnings)
}

/// Walks from node `i` in direction `dir` until `y` crosses `level`, then
/// solves `f = level` on the bracketing cell.
fn crossing<F: Fn(f64) -> f64>(x: &[f64], y: &[f64], f: &F, i: usize, level: f64, dir: isize) -> Option<f64> {
    let above = y[i] > level;
    let mut k = i as isize;
    loop {
        let next = k + dir;
        if next < 0 || next as usize >= x.len() {
            return None;
        }
        if (y[next as usize] > level) != above {
            let (a, b) = (x[k as usize].min(x[next as usize]), x[k as usize].max(x[next as usize]));
            return brent_root(|w| Ok(f(w) - level), a, b, 1e-14 * (1.0 + a.abs()), 200).ok();
        }
        k = next;
    }
}

/// Locates the lower-polariton transmission maximum, including the shift
/// from `Re Σ`.
///
/// The quasi-particle equation `ω = ω_LP(Δ_c, Re Σ(ω))` seeds a fine scan of
/// `|t|²` around the pole, and the best node is refined by a parabolic search.
pub fn lower_polariton_peak(params: &SystemParams, tbl: Option<&SelfEnergyTable>) -> Result<Resonance> {
    params.validate()?;
    let d = params.delta_c;
    let g = params.g_c;
    let mut w = params.polaritons().omega_lp;
    for _ in 0..200 {
        let e = sigma_at(w, tbl).re;
        let next = 0.5 * (d + e - ((d - e).powi(2) + 4.0 * g * g).sqrt());
        if (next - w).abs() < 1e-13 {
            w = next;
            break;
        }
        w = next;
    }
    let pol = params.polaritons();
    let s = sigma_at(w, tbl);
    let width = pol.c2_lp * params.kappa_c + pol.x2_lp * (params.gamma_d - 2.0 * s.im);
    let half = (25.0 * width).max(1e-3);
    let n = 4001;
    let grid: Vec<f64> = (0..n)
        .map(|i| w - half + 2.0 * half * i as f64 / (n - 1) as f64)
        .collect();
    let tf = |x: f64| transmission(x, params, tbl).norm_sqr();
    let vals: Vec<f64> = grid.iter().map(|&x| tf(x)).collect();
    let (k, _) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::NoResonance("empty scan".into()))?;
    if k == 0 || k == n - 1 {
        return Err(Error::NoResonance(format!(
            "transmission maximum at the edge of the scan window around {w:.6} meV"
        )));
    }
    let (wp, tp) = brent_max(tf, grid[k - 1], grid[k + 1], 1e-13 * (1.0 + w.abs()), 200);
    // Widen the window for the half-maximum search if needed.
    let wide: Vec<f64> = (0..n)
        .map(|i| wp - 4.0 * half + 8.0 * half * i as f64 / (n - 1) as f64)
        .collect();
    let wide_vals: Vec<f64> = wide.iter().map(|&x| tf(x)).collect();
    let centre = wide_vals
        .iter()
        .enumerate()
        .min_by(|a, b| (wide[a.0] - wp).abs().total_cmp(&(wide[b.0] - wp).abs()))
        .map(|(i, _)| i)
        .unwrap_or(n / 2);
    let level = 0.5 * tp;
    let fwhm = crossing(&wide, &wide_vals, &tf, centre, level, -1)
        .zip(crossing(&wide, &wide_vals, &tf, centre, level, 1))
        .map(|(a, b)| b - a);
    Ok(Resonance {
        kind: Extremum::Peak,
        omega_peak: wp,
        peak_t: tp,
        fwhm,
    })
}

/// Peak transmission of a Lorentzian line of radiative width `gamma_lp`
/// with extra broadening `gamma_extra`: `|Γ/(Γ + γ)|²`.
pub fn peak_transmission_formula(gamma_lp: f64, gamma_extra: f64) -> f64 {
    (gamma_lp / (gamma_lp + gamma_extra)).powi(2)
}

/// Transmission dip at the bare exciton for a resonant cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DarkResonance {
    pub dip_omega: f64,
    pub dip_t: f64,
    /// Width at half depth, measured from the lower of the two flanking
    /// polariton maxima.
    pub dip_fwhm: Option<f64>,
    /// True when κ_c ≤ 4 g_c, outside the regime where the dip is narrow.
    pub outside_regime: bool,
}

/// Dip position, depth and half-depth width for `Δ_c = 0`. Returns `None`
/// when no dip exists (`g_c = 0`).
pub fn dark_resonance_metrics(
    params: &SystemParams,
    tbl: Option<&SelfEnergyTable>,
) -> Result<Option<DarkResonance>> {
    params.validate()?;
    if params.delta_c != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "dark-resonance analysis needs delta_c = 0, got {}",
            params.delta_c
        )));
    }
    let g = params.g_c;
    if g == 0.0 {
        return Ok(None);
    }
    let shift = sigma_at(0.0, tbl).re;
    let tf = |w: f64| transmission(w, params, tbl).norm_sqr();
    let tol = 1e-14 * (1.0 + g);
    let (dip_omega, neg) = brent_max(|w| -tf(w), shift - g, shift + g, tol, 500);
    let dip_t = -neg;
    let span = 3.0 * g + params.kappa_c;
    let (wl, tl) = brent_max(tf, dip_omega - span, dip_omega, tol, 500);
    let (wr, tr) = brent_max(tf, dip_omega, dip_omega + span, tol, 500);
    let level = 0.5 * (dip_t + tl.min(tr));
    let left = brent_root(|w| Ok(tf(w) - level), wl, dip_omega, tol, 500).ok();
    let right = brent_root(|w| Ok(tf(w) - level), dip_omega, wr, tol, 500).ok();
    Ok(Some(DarkResonance {
        dip_omega,
        dip_t,
        dip_fwhm: left.zip(right).map(|(a, b)| b - a),
        outside_regime: params.kappa_c <= 4.0 * g,
    }))
}
