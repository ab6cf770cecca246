//! Disorder self-energy of the `k = 0` exciton.
//!
//! For a Gaussian-correlated potential with variance σ² and correlation
//! energy `E_c`, the momentum integral of the second-order diagram collapses
//! onto the exciton kinetic energy `E ≥ 0`:
//!
//! ```text
//! Σ(ω) = A ∫₀^∞ dE e^{−bE} / (ω − E − Σ(ω)),   A = σ²/(2E_c),  b = 1/(2E_c)
//! ```
//!
//! Dropping `Σ` on the right gives the first Born result; solving the equation
//! per frequency gives the self-consistent Born approximation (SCBA).
//! Tables are sampled on a uniform grid and interpolated with a monotone
//! cubic, so `Im Σ ≤ 0` holds between nodes as well.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::interp::Pchip;
use crate::numerics::quad::{integrate, QuadOptions};
use crate::numerics::special::{e1_scaled, EULER_GAMMA};
use crate::C64;

const MIN_POINTS_PER_EC: f64 = 8.0;

/// Uniform frequency grid for a self-energy table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn new(omega_min: f64, omega_max: f64, n_points: usize) -> Result<Self> {
        if !(omega_min.is_finite() && omega_max.is_finite()) || omega_max <= omega_min || n_points < 2 {
            return Err(Error::InvalidParameter(format!(
                "bad grid [{omega_min}, {omega_max}] with {n_points} points"
            )));
        }
        Ok(GridSpec {
            omega_min,
            omega_max,
            n_points,
        })
    }

    /// Default grid: `[−10σ, 20E_c]` rounded outward to whole steps of
    /// `min(σ, E_c)/40`, with ω = 0 on a node.
    pub fn default_for(sigma: f64, e_c: f64) -> Self {
        let scale = if sigma > 0.0 { sigma.min(e_c) } else { e_c };
        let h = scale / 40.0;
        let below = (10.0 * sigma.max(if sigma > 0.0 { 0.0 } else { e_c }) / h).ceil() as usize;
        let above = (20.0 * e_c / h).ceil() as usize;
        GridSpec {
            omega_min: -(below as f64) * h,
            omega_max: above as f64 * h,
            n_points: below + above + 1,
        }
    }

    /// Same span with the step divided by `factor`; existing nodes are kept.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("refinement factor must be >= 1".into()));
        }
        GridSpec::new(self.omega_min, self.omega_max, factor * (self.n_points - 1) + 1)
    }

    pub fn step(&self) -> f64 {
        (self.omega_max - self.omega_min) / (self.n_points - 1) as f64
    }

    /// Node positions. A node within rounding of zero is snapped to exactly 0.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n_points)
            .map(|i| {
                let w = if i == self.n_points - 1 {
                    self.omega_max
                } else {
                    self.omega_min + h * i as f64
                };
                if w.abs() < 1e-9 * h {
                    0.0
                } else {
                    w
                }
            })
            .collect()
    }
}

/// Disorder strength, correlation energy and sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderParams {
    pub sigma: f64,
    pub e_c: f64,
    pub ec_equals_sigma: bool,
    pub grid: GridSpec,
}

impl DisorderParams {
    /// Correlation energy tied to the disorder strength, `E_c = σ`.
    pub fn correlated(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive when E_c = sigma, got {sigma}"
            )));
        }
        let p = DisorderParams {
            sigma,
            e_c: sigma,
            ec_equals_sigma: true,
            grid: GridSpec::default_for(sigma, sigma),
        };
        p.validate()?;
        Ok(p)
    }

    /// Independent σ and E_c. `sigma = 0` is allowed and yields Σ ≡ 0.
    pub fn new(sigma: f64, e_c: f64) -> Result<Self> {
        let p = DisorderParams {
            sigma,
            e_c,
            ec_equals_sigma: false,
            grid: GridSpec::default_for(sigma, e_c),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.e_c > 0.0 && self.e_c.is_finite()) {
            return Err(Error::InvalidParameter(format!("E_c must be > 0, got {}", self.e_c)));
        }
        if self.ec_equals_sigma && self.e_c != self.sigma {
            return Err(Error::InvalidParameter(format!(
                "E_c = sigma requested but E_c = {} and sigma = {}",
                self.e_c, self.sigma
            )));
        }
        let g = &self.grid;
        let slack = 1e-9 * g.step();
        if g.omega_min > -10.0 * self.sigma + slack || g.omega_max < 20.0 * self.e_c - slack {
            return Err(Error::InvalidParameter(format!(
                "grid [{}, {}] must cover [-10 sigma, 20 E_c] = [{}, {}]",
                g.omega_min,
                g.omega_max,
                -10.0 * self.sigma,
                20.0 * self.e_c
            )));
        }
        let per_ec = self.e_c / g.step();
        if per_ec < MIN_POINTS_PER_EC {
            return Err(Error::GridTooCoarse { points_per_ec: per_ec });
        }
        Ok(())
    }

    /// Prefactor `A = σ²/(2E_c)`.
    pub fn prefactor(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.e_c)
    }

    /// Decay rate `b = 1/(2E_c)` of the kinetic-energy weight.
    pub fn decay(&self) -> f64 {
        0.5 / self.e_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Born,
    Scba,
    Samples,
}

/// Sampled retarded self-energy with interpolation and tail rules.
#[derive(Debug, Clone)]
pub struct SelfEnergyTable {
    pub kind: TableKind,
    pub sigma: f64,
    pub e_c: f64,
    pub omega: Vec<f64>,
    pub sigma_re: Vec<f64>,
    pub sigma_im: Vec<f64>,
    /// max |Im Σ| over the grid.
    pub delta_dis: f64,
    /// Hard lower edge of the spectral support when it falls on a node
    /// (first Born: ω = 0). `Im Σ` is zero below it, and the node itself
    /// stores the right limit.
    pub band_edge: Option<f64>,
    /// Fixed-point iterations per node (SCBA only).
    pub iterations: Vec<usize>,
    re_interp: Pchip,
    im_interp: Pchip,
}

impl SelfEnergyTable {
    /// Table from raw samples on a strictly increasing grid.
    pub fn from_samples(
        omega: Vec<f64>,
        sigma_re: Vec<f64>,
        sigma_im: Vec<f64>,
        sigma: f64,
        e_c: f64,
    ) -> Result<Self> {
        Self::build(TableKind::Samples, omega, sigma_re, sigma_im, sigma, e_c, None, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: TableKind,
        omega: Vec<f64>,
        sigma_re: Vec<f64>,
        sigma_im: Vec<f64>,
        sigma: f64,
        e_c: f64,
        band_edge: Option<f64>,
        iterations: Vec<usize>,
    ) -> Result<Self> {
        if omega.len() < 2 || omega.len() != sigma_re.len() || omega.len() != sigma_im.len() {
            return Err(Error::InvalidParameter("self-energy samples have mismatched lengths".into()));
        }
        if !omega.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("self-energy grid must be strictly increasing".into()));
        }
        if let Some((i, _)) = sigma_im.iter().enumerate().find(|(_, v)| **v > 0.0) {
            return Err(Error::Causality {
                omega: omega[i],
                im_sigma: sigma_im[i],
            });
        }
        let delta_dis = sigma_im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let re_interp = Pchip::new(omega.clone(), sigma_re.clone());
        let im_interp = Pchip::new(omega.clone(), sigma_im.clone());
        Ok(SelfEnergyTable {
            kind,
            sigma,
            e_c,
            omega,
            sigma_re,
            sigma_im,
            delta_dis,
            band_edge,
            iterations,
            re_interp,
            im_interp,
        })
    }

    pub fn omega_min(&self) -> f64 {
        self.omega[0]
    }

    pub fn omega_max(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }

    /// Interpolated Σ(ω). Outside the grid `Im Σ = 0` and `Re Σ` follows the
    /// Born tail `σ²/ω + c/ω²`, with `c` matching the nearest end node.
    pub fn eval(&self, w: f64) -> C64 {
        let (lo, hi) = (self.omega_min(), self.omega_max());
        if w < lo || w > hi {
            let edge = if w < lo { lo } else { hi };
            let re_edge = self.re_interp.eval(edge);
            let s2 = self.sigma * self.sigma;
            let re = if edge != 0.0 {
                s2 / w + (re_edge - s2 / edge) * (edge / w).powi(2)
            } else {
                0.0
            };
            return C64::new(re, 0.0);
        }
        let im = match self.band_edge {
            Some(e) if w < e => 0.0,
            _ => self.im_interp.eval(w).min(0.0),
        };
        C64::new(self.re_interp.eval(w), im)
    }

    /// CSV with columns `omega_meV,re_sigma_meV,im_sigma_meV`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega_meV,re_sigma_meV,im_sigma_meV\n");
        for i in 0..self.omega.len() {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e}",
                self.omega[i], self.sigma_re[i], self.sigma_im[i]
            );
        }
        s
    }

    /// Per-node iteration counts, `omega_meV,iterations`.
    pub fn convergence_csv(&self) -> String {
        let mut s = String::from("omega_meV,iterations\n");
        for (w, n) in self.omega.iter().zip(&self.iterations) {
            let _ = writeln!(s, "{w:.16e},{n}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// `F(z) = ∫₀^∞ e^{−bE}/(z − E) dE` for `Im z ≥ 0`.
///
/// The pole is removed analytically: the integrand minus `e^{−bz}/(z − E)`
/// is entire in `E` and integrated numerically on `[0, L]`, the subtracted
/// term contributes `e^{−bz}[ln z − ln(z − L)]`, and the remainder beyond
/// `L` is below `e^{−40}` relative and added to leading order. On the real
/// axis this is the principal value plus the `−iπ` delta term.
pub fn band_integral(z: C64, b: f64) -> C64 {
    // A literal +0 keeps the logarithms on the retarded side of their cuts.
    let z = C64::new(z.re, if z.im > 0.0 { z.im } else { 0.0 });
    let l = z.re.max(0.0) + 40.0 / b;
    let ez = (-b * z).exp();
    let regular = |e: f64| {
        let d = z - e;
        let w = d * b;
        if w.norm() > 0.5 {
            (C64::new((-b * e).exp(), 0.0) - ez) / d
        } else {
            ez * b * phi(w)
        }
    };
    let breaks = [z.re, z.re - 5.0 / b, z.re + 5.0 / b, 5.0 / b];
    let q = integrate(regular, 0.0, l, &breaks, QuadOptions::tol(1e-15, 1e-13));
    let logs = ez * (z.ln() - (z - l).ln());
    let tail = -(-b * l).exp() / ((C64::new(l, 0.0) - z) * b);
    q.value + logs + tail
}

/// `(e^w − 1)/w` for small |w|.
fn phi(w: C64) -> C64 {
    let mut term = C64::new(1.0, 0.0);
    let mut sum = term;
    for k in 2..30 {
        term = term * w / k as f64;
        sum += term;
        if term.norm() < 1e-17 {
            break;
        }
    }
    sum
}

/// First-order Born self-energy on the grid of `dp`.
///
/// The node at ω = 0 sits on the logarithmic singularity of `Re Σ¹`; it
/// stores the cell average `A(γ_E + ln(bh/2) − 1)` and the right limit
/// `−πA` of the imaginary part.
pub fn born_self_energy(dp: &DisorderParams) -> Result<SelfEnergyTable> {
    dp.validate()?;
    let omega = dp.grid.nodes();
    let (a, b) = (dp.prefactor(), dp.decay());
    let h = dp.grid.step();
    let vals: Vec<C64> = omega
        .par_iter()
        .map(|&w| born_point(w, a, b, h))
        .collect();
    let has_zero = a > 0.0 && omega.contains(&0.0);
    SelfEnergyTable::build(
        TableKind::Born,
        omega,
        vals.iter().map(|v| v.re).collect(),
        vals.iter().map(|v| v.im).collect(),
        dp.sigma,
        dp.e_c,
        has_zero.then_some(0.0),
        Vec::new(),
    )
}

fn born_point(w: f64, a: f64, b: f64, h: f64) -> C64 {
    if a == 0.0 {
        return C64::new(0.0, 0.0);
    }
    if w == 0.0 {
        let re = a * (EULER_GAMMA + (0.5 * b * h).ln() - 1.0);
        return C64::new(re, -std::f64::consts::PI * a);
    }
    let v = band_integral(C64::new(w, 0.0), b) * a;
    if w < 0.0 {
        C64::new(v.re, 0.0)
    } else {
        v
    }
}

/// Fixed-point controls for the SCBA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScbaOptions {
    /// Convergence threshold on |RHS(Σ) − Σ| (meV).
    pub tol: f64,
    pub max_iter: usize,
    /// Linear mixing fraction in (0, 1].
    pub mixing: f64,
}

impl Default for ScbaOptions {
    fn default() -> Self {
        ScbaOptions {
            tol: 1e-6,
            max_iter: 10_000,
            mixing: 0.5,
        }
    }
}

/// Mixing iterations at a node before Newton steps are tried.
const NEWTON_AFTER: usize = 1000;

enum PointError {
    Causality { im: f64 },
    Stalled { update: f64 },
}

type PointResult = std::result::Result<(C64, usize), PointError>;

/// Self-consistent Born self-energy, solved independently at every node
/// starting from the Born value.
///
/// Iteration stops once the undamped residual `|RHS(Σ_n) − Σ_n|` drops
/// below `tol`, and `Σ_n` is returned, so the stored table satisfies the
/// re-substitution check by construction.
pub fn scba_self_energy(dp: &DisorderParams, opts: &ScbaOptions) -> Result<SelfEnergyTable> {
    if !(opts.mixing > 0.0 && opts.mixing <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mixing must lie in (0, 1], got {}",
            opts.mixing
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter("tol and max_iter must be positive".into()));
    }
    let born = born_self_energy(dp)?;
    let (a, b) = (dp.prefactor(), dp.decay());
    let results: Vec<(f64, PointResult)> = born
        .omega
        .par_iter()
        .enumerate()
        .map(|(i, &w)| {
            let init = C64::new(born.sigma_re[i], born.sigma_im[i]);
            (w, scba_point(w, a, b, init, opts))
        })
        .collect();

    let mut vals = Vec::with_capacity(results.len());
    let mut iterations = Vec::with_capacity(results.len());
    let mut failures = 0usize;
    let mut worst = (f64::NAN, 0.0f64);
    for (w, r) in &results {
        match r {
            Ok((s, n)) => {
                vals.push(*s);
                iterations.push(*n);
            }
            Err(PointError::Causality { im }) => {
                return Err(Error::Causality {
                    omega: *w,
                    im_sigma: *im,
                })
            }
            Err(PointError::Stalled { update }) => {
                failures += 1;
                if *update > worst.1 || worst.0.is_nan() {
                    worst = (*w, *update);
                }
            }
        }
    }
    if failures > 0 {
        return Err(Error::NoConvergence {
            failures,
            worst_omega: worst.0,
            worst_update: worst.1,
            iterations: opts.max_iter,
        });
    }
    SelfEnergyTable::build(
        TableKind::Scba,
        born.omega,
        vals.iter().map(|v| v.re).collect(),
        vals.iter().map(|v| v.im).collect(),
        dp.sigma,
        dp.e_c,
        None,
        iterations,
    )
}

fn scba_point(
    w: f64,
    a: f64,
    b: f64,
    init: C64,
    opts: &ScbaOptions,
) -> std::result::Result<(C64, usize), PointError> {
    if a == 0.0 {
        return Ok((C64::new(0.0, 0.0), 0));
    }
    let mut s = init;
    let mut update = f64::INFINITY;
    for n in 0..opts.max_iter {
        let z = w - s;
        let integral = band_integral(z, b);
        let rhs = integral * a;
        if rhs.im > opts.tol {
            return Err(PointError::Causality { im: rhs.im });
        }
        let r = rhs - s;
        update = r.norm();
        if update < opts.tol {
            return Ok((s, n));
        }
        // Mixing slows to a crawl at the band edge, where the map's slope
        // approaches one. Newton on RHS(Σ) − Σ takes over there, using
        // I'(z) = 1/z − b·I(z) from integrating by parts.
        if n >= NEWTON_AFTER {
            let slope = a * (integral * b - 1.0 / z);
            let next = s - r / (slope - 1.0);
            if next.is_finite() && next.im <= opts.tol {
                s = next;
                continue;
            }
        }
        s += r * opts.mixing;
    }
    Err(PointError::Stalled { update })
}

/// max over nodes of |A·F(ω − Σ(ω)) − Σ(ω)|.
pub fn resubstitution_residual(tbl: &SelfEnergyTable) -> f64 {
    if tbl.sigma == 0.0 {
        return tbl
            .sigma_re
            .iter()
            .chain(&tbl.sigma_im)
            .fold(0.0, |m, v| m.max(v.abs()));
    }
    let a = tbl.sigma * tbl.sigma / (2.0 * tbl.e_c);
    let b = 0.5 / tbl.e_c;
    (0..tbl.omega.len())
        .into_par_iter()
        .map(|i| {
            let s = C64::new(tbl.sigma_re[i], tbl.sigma_im[i]);
            (band_integral(tbl.omega[i] - s, b) * a - s).norm()
        })
        .reduce(|| 0.0, f64::max)
}

/// σ (meV, with `E_c = σ` and the default grid) whose SCBA table has
/// `delta_dis = 1 meV`, as found by [`calibrate_sigma`] with the default options.
pub const SIGMA_FOR_UNIT_DELTA_DIS: f64 = 1.473_970_174_919;

/// Finds σ (with `E_c = σ` and the default grid) such that the SCBA table has
/// `delta_dis = target` within `tol`.
///
/// The bracket is grown geometrically from the Born estimate `2·target/π`,
/// then closed with the Illinois variant of regula falsi.
pub fn calibrate_sigma(
    target_delta_dis: f64,
    tol: f64,
    opts: &ScbaOptions,
) -> Result<(DisorderParams, SelfEnergyTable)> {
    if !(target_delta_dis > 0.0 && target_delta_dis.is_finite()) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "calibration target must be positive, got {target_delta_dis}"
        )));
    }
    let solve = |sigma: f64| -> Result<(DisorderParams, SelfEnergyTable)> {
        let dp = DisorderParams::correlated(sigma)?;
        let t = scba_self_energy(&dp, opts)?;
        Ok((dp, t))
    };
    let seed = born_seed(target_delta_dis);
    let mut lo = seed;
    let mut hi = seed;
    let mut lo_run = solve(lo)?;
    let mut f_lo = lo_run.1.delta_dis - target_delta_dis;
    if f_lo.abs() < tol {
        return Ok(lo_run);
    }
    let mut hi_run;
    let mut f_hi;
    if f_lo < 0.0 {
        loop {
            hi *= 1.5;
            hi_run = solve(hi)?;
            f_hi = hi_run.1.delta_dis - target_delta_dis;
            if f_hi >= 0.0 {
                break;
            }
            if hi > 64.0 * seed {
                return Err(Error::Bracket {
                    target: target_delta_dis,
                    lo: seed,
                    hi,
                });
            }
            lo = hi;
            lo_run = hi_run;
            f_lo = f_hi;
        }
    } else {
        hi_run = lo_run;
        f_hi = f_lo;
        loop {
            lo /= 1.5;
            lo_run = solve(lo)?;
            f_lo = lo_run.1.delta_dis - target_delta_dis;
            if f_lo <= 0.0 {
                break;
            }
            if lo < seed / 64.0 {
                return Err(Error::Bracket {
                    target: target_delta_dis,
                    lo,
                    hi: seed,
                });
            }
            hi = lo;
            hi_run = lo_run;
            f_hi = f_lo;
        }
    }
    if f_hi.abs() < tol {
        return Ok(hi_run);
    }
    if f_lo.abs() < tol {
        return Ok(lo_run);
    }
    let mut side = 0i32;
    for _ in 0..100 {
        let x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let run = solve(x)?;
        let fx = run.1.delta_dis - target_delta_dis;
        if fx.abs() < tol {
            return Ok(run);
        }
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::Bracket {
        target: target_delta_dis,
        lo,
        hi,
    })
}

/// Born estimate σ₀ = 2·δ_dis/π (from δ_dis = πσ/2 at E_c = σ).
pub fn born_seed(target_delta_dis: f64) -> f64 {
    2.0 * target_delta_dis / std::f64::consts::PI
}

/// Kramers-Kronig consistency: max over nodes of
/// `|Re Σ(ω) − (1/π) PV∫ Im Σ(ε)/(ε − ω) dε|`.
///
/// `Im Σ` is taken piecewise linear between nodes, for which the principal
/// value is exact, plus an exponential continuation `e^{−(ε−ω_max)/(2E_c)}`
/// above the grid. At a band edge the segment ending on it uses the left
/// limit 0, and the edge node itself (where `Re Σ` diverges) is skipped.
pub fn kk_residual(tbl: &SelfEnergyTable) -> f64 {
    let x = &tbl.omega;
    let n = x.len();
    let edge_idx = tbl.band_edge.and_then(|e| x.iter().position(|&w| w == e));
    // Left-limit value at node k+1 for segment k.
    let right_val = |k: usize| -> f64 {
        if Some(k + 1) == edge_idx {
            0.0
        } else {
            tbl.sigma_im[k + 1]
        }
    };
    let rate = if tbl.e_c > 0.0 { 0.5 / tbl.e_c } else { 0.0 };
    (0..n)
        .into_par_iter()
        .filter(|&i| Some(i) != edge_idx)
        .map(|i| {
            let w = x[i];
            let mut h = 0.0;
            for k in 0..n - 1 {
                let (a, b) = (x[k], x[k + 1]);
                let (fa, fb) = (tbl.sigma_im[k], right_val(k));
                if fa == 0.0 && fb == 0.0 {
                    continue;
                }
                let slope = (fb - fa) / (b - a);
                let f_at = fa + slope * (w - a);
                let mut logs = 0.0;
                if k + 1 != i {
                    logs += (b - w).abs().ln();
                }
                if k != i {
                    logs -= (a - w).abs().ln();
                }
                // The ln|0| pieces from the two segments meeting at node i
                // cancel because f_at is the same on both.
                h += f_at * logs + slope * (b - a);
            }
            let f_max = tbl.sigma_im[n - 1];
            let d = x[n - 1] - w;
            if f_max != 0.0 && rate > 0.0
                && d > 0.0 {
                    h += f_max * e1_scaled(rate * d);
                }
            (tbl.sigma_re[i] - h / std::f64::consts::PI).abs()
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::{e1, ei};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_2_PI, PI};

    fn small_grid(sigma: f64, e_c: f64) -> DisorderParams {
        DisorderParams::new(sigma, e_c).unwrap()
    }

    /// Closed form of the first Born integral, away from ω = 0.
    fn born_exact(w: f64, a: f64, b: f64) -> C64 {
        if w < 0.0 {
            C64::new(-a * e1_scaled(-b * w), 0.0)
        } else {
            C64::new(a * (-b * w).exp() * ei(b * w), -PI * a * (-b * w).exp())
        }
    }

    #[test]
    fn band_integral_matches_direct_quadrature_off_axis() {
        let b = 0.7;
        for &z in &[C64::new(-1.0, 0.3), C64::new(2.0, 0.05), C64::new(0.1, 1.5), C64::new(30.0, 0.2)] {
            let direct = integrate(
                |e| C64::new((-b * e).exp(), 0.0) / (z - e),
                0.0,
                400.0,
                &[z.re],
                QuadOptions::tol(1e-15, 1e-13),
            )
            .value;
            let f = band_integral(z, b);
            assert!((f - direct).norm() < 1e-10 * direct.norm(), "z={z} {f} {direct}");
        }
    }

    #[test]
    fn born_matches_exponential_integrals() {
        let dp = small_grid(FRAC_2_PI, FRAC_2_PI);
        let t = born_self_energy(&dp).unwrap();
        let (a, b) = (dp.prefactor(), dp.decay());
        for (i, &w) in t.omega.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let ex = born_exact(w, a, b);
            assert!((t.sigma_re[i] - ex.re).abs() < 1e-6 * ex.re.abs().max(1e-3), "w={w}");
            assert!((t.sigma_im[i] - ex.im).abs() < 1e-12, "w={w}");
        }
        assert!((e1(1.0) - e1_scaled(1.0) / 1f64.exp()).abs() < 1e-16);
    }

    #[test]
    fn born_delta_dis_is_pi_sigma_over_two() {
        let s = FRAC_2_PI;
        let t = born_self_energy(&small_grid(s, s)).unwrap();
        assert_relative_eq!(t.delta_dis, PI * s / 2.0, max_relative = 1e-12);
        assert!((t.delta_dis - 1.0).abs() < 1e-4);
    }

    #[test]
    fn born_below_band_is_real() {
        let s = 0.8;
        let t = born_self_energy(&small_grid(s, s)).unwrap();
        assert_eq!(t.eval(-5.0 * s).im, 0.0);
        for (w, im) in t.omega.iter().zip(&t.sigma_im) {
            if *w < 0.0 {
                assert_eq!(*im, 0.0);
            }
        }
    }

    #[test]
    fn born_scales_as_sigma_squared() {
        let e_c = 0.5;
        let grid = GridSpec::default_for(0.6, e_c);
        let t1 = born_self_energy(&DisorderParams::new(0.3, e_c).unwrap().with_grid(grid).unwrap()).unwrap();
        let t2 = born_self_energy(&DisorderParams::new(0.6, e_c).unwrap().with_grid(grid).unwrap()).unwrap();
        for i in 0..t1.omega.len() {
            assert_relative_eq!(t2.sigma_re[i], 4.0 * t1.sigma_re[i], max_relative = 1e-12, epsilon = 1e-15);
            assert_relative_eq!(t2.sigma_im[i], 4.0 * t1.sigma_im[i], max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn calibration_reproduces_frozen_sigma() {
        let (dp, tbl) = calibrate_sigma(1.0, 1e-6, &ScbaOptions::default()).unwrap();
        assert!((dp.sigma - SIGMA_FOR_UNIT_DELTA_DIS).abs() < 1e-6, "{}", dp.sigma);
        assert!((tbl.delta_dis - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coarse_grid_rejected() {
        let dp = DisorderParams::new(1.0, 1.0).unwrap();
        let coarse = GridSpec::new(-10.0, 20.0, 100).unwrap();
        assert!(matches!(dp.with_grid(coarse), Err(Error::GridTooCoarse { .. })));
        let narrow = GridSpec::new(-5.0, 20.0, 1000).unwrap();
        assert!(matches!(dp.with_grid(narrow), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn refined_grid_keeps_nodes() {
        let g = GridSpec::default_for(1.0, 1.0);
        let r = g.refined(4).unwrap();
        let (a, b) = (g.nodes(), r.nodes());
        for (i, w) in a.iter().enumerate() {
            assert!((b[4 * i] - w).abs() < 1e-12);
        }
        assert!(b.contains(&0.0));
    }

    #[test]
    fn default_grid_has_zero_node() {
        for &(s, e) in &[(1.0, 1.0), (0.3, 0.7), (1.474, 1.474)] {
            let g = GridSpec::default_for(s, e);
            assert!(g.nodes().contains(&0.0));
            assert!(DisorderParams::new(s, e).is_ok());
        }
    }

    #[test]
    fn scba_first_step_from_zero_is_born() {
        let dp = small_grid(0.5, 0.5);
        let born = born_self_energy(&dp).unwrap();
        let (a, b) = (dp.prefactor(), dp.decay());
        for (i, &w) in born.omega.iter().enumerate().step_by(37) {
            if w == 0.0 {
                continue;
            }
            let step = band_integral(C64::new(w, 0.0), b) * a;
            assert_eq!(step.re, born.sigma_re[i]);
            if w > 0.0 {
                assert_eq!(step.im, born.sigma_im[i]);
            }
        }
    }

    #[test]
    fn scba_is_causal_and_self_consistent() {
        let dp = DisorderParams::correlated(FRAC_2_PI).unwrap();
        let opts = ScbaOptions::default();
        let t = scba_self_energy(&dp, &opts).unwrap();
        assert!(t.sigma_im.iter().all(|v| *v <= 0.0));
        assert!(resubstitution_residual(&t) < opts.tol);
        // Self-consistency moves weight and lowers the peak relative to Born.
        assert!(t.delta_dis < PI * FRAC_2_PI / 2.0);
        assert!(t.iterations.iter().all(|&n| n < opts.max_iter));
    }

    #[test]
    fn scba_weak_disorder_tends_to_born() {
        let e_c = 1.0;
        let dp = DisorderParams::new(0.05 * e_c, e_c).unwrap();
        let born = born_self_energy(&dp).unwrap();
        let scba = scba_self_energy(&dp, &ScbaOptions { tol: 1e-9, ..Default::default() }).unwrap();
        for i in 0..born.omega.len() {
            let b = C64::new(born.sigma_re[i], born.sigma_im[i]);
            let s = C64::new(scba.sigma_re[i], scba.sigma_im[i]);
            // Within a few |Σ| of ω = 0 SCBA cuts off the logarithmic
            // singularity of the Born result, so the two cannot agree there.
            if b.norm() > 1e-4 && born.omega[i].abs() > 0.05 * e_c {
                assert!((s - b).norm() <= 0.05 * b.norm(), "w={} born={b} scba={s}", born.omega[i]);
            }
        }
    }

    #[test]
    fn zero_disorder_gives_zero_table() {
        let dp = DisorderParams::new(0.0, 1.0).unwrap();
        let t = scba_self_energy(&dp, &ScbaOptions::default()).unwrap();
        assert!(t.sigma_re.iter().chain(&t.sigma_im).all(|v| *v == 0.0));
        assert_eq!(t.delta_dis, 0.0);
        assert_eq!(t.eval(-100.0), C64::new(0.0, 0.0));
    }

    #[test]
    fn scba_converges_at_the_band_edge() {
        let dp = DisorderParams::correlated(SIGMA_FOR_UNIT_DELTA_DIS).unwrap();
        let fine = dp.with_grid(dp.grid.refined(4).unwrap()).unwrap();
        let tbl = scba_self_energy(&fine, &ScbaOptions::default()).unwrap();
        assert!(resubstitution_residual(&tbl) < 1e-6);
        // Nodes shared with the default grid are unchanged.
        let coarse = scba_self_energy(&dp, &ScbaOptions::default()).unwrap();
        for i in 0..coarse.omega.len() {
            let d = C64::new(coarse.sigma_re[i] - tbl.sigma_re[4 * i], coarse.sigma_im[i] - tbl.sigma_im[4 * i]);
            assert!(d.norm() < 1e-5, "omega = {}", coarse.omega[i]);
        }
    }

    #[test]
    fn scba_rejects_bad_options() {
        let dp = small_grid(0.5, 0.5);
        let bad = ScbaOptions { mixing: 0.0, ..Default::default() };
        assert!(scba_self_energy(&dp, &bad).is_err());
    }

    #[test]
    fn scba_reports_nonconvergence() {
        let dp = small_grid(0.5, 0.5);
        let opts = ScbaOptions { max_iter: 2, tol: 1e-12, mixing: 0.5 };
        match scba_self_energy(&dp, &opts) {
            Err(Error::NoConvergence { failures, worst_omega, .. }) => {
                assert!(failures > 0);
                assert!(worst_omega.is_finite());
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn kk_born_fine_grid() {
        let s = FRAC_2_PI;
        let dp = small_grid(s, s);
        let fine = GridSpec {
            n_points: 2 * (dp.grid.n_points - 1) + 1,
            ..dp.grid
        };
        let t = born_self_energy(&dp.with_grid(fine).unwrap()).unwrap();
        let r = kk_residual(&t);
        assert!(r < 1e-3, "kk residual {r}");
    }

    #[test]
    fn kk_does_not_grow_under_refinement() {
        let s = FRAC_2_PI;
        let dp = small_grid(s, s);
        let r1 = kk_residual(&born_self_energy(&dp).unwrap());
        let fine = GridSpec {
            n_points: 2 * (dp.grid.n_points - 1) + 1,
            ..dp.grid
        };
        let r2 = kk_residual(&born_self_energy(&dp.with_grid(fine).unwrap()).unwrap());
        assert!(r2 <= r1, "{r2} > {r1}");
    }

    #[test]
    fn kk_flags_missing_imaginary_part() {
        let w: Vec<f64> = (0..50).map(|i| -1.0 + 0.05 * i as f64).collect();
        let re: Vec<f64> = w.iter().map(|x| 0.3 * x.sin()).collect();
        let max_re = re.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let t = SelfEnergyTable::from_samples(w.clone(), re, vec![0.0; 50], 0.5, 0.5).unwrap();
        assert_eq!(kk_residual(&t), max_re);
    }

    #[test]
    fn samples_must_be_causal() {
        let w = vec![0.0, 1.0, 2.0];
        assert!(matches!(
            SelfEnergyTable::from_samples(w, vec![0.0; 3], vec![0.0, 1e-3, 0.0], 1.0, 1.0),
            Err(Error::Causality { .. })
        ));
    }

    #[test]
    fn tail_continues_smoothly() {
        let t = born_self_energy(&small_grid(0.5, 0.5)).unwrap();
        let hi = t.omega_max();
        let lo = t.omega_min();
        let inside = t.eval(hi);
        let outside = t.eval(hi * (1.0 + 1e-12));
        assert!((inside.re - outside.re).abs() < 1e-9);
        assert_eq!(outside.im, 0.0);
        assert!((t.eval(lo).re - t.eval(lo * (1.0 + 1e-12)).re).abs() < 1e-9);
        // Leading 1/ω behaviour far away.
        let far = 1e4;
        assert_relative_eq!(t.eval(far).re * far, 0.25, max_relative = 1e-3);
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let t = born_self_energy(&small_grid(0.5, 0.5)).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("omega_meV,re_sigma_meV,im_sigma_meV"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], t.omega[0]);
        assert_eq!(first[1], t.sigma_re[0]);
        assert_eq!(csv.lines().count(), t.omega.len() + 1);
    }
}
