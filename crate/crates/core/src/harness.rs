//! Subcommands: turn a [`RunConfig`] into files in an output directory.
//!
//! Every run writes `resolved_config.ini`, its data files, and finally
//! `manifest.tsv` with one `name<TAB>path<TAB>sha256` line per file.
//! Curves are computed on a rayon pool and each worker writes its own
//! files; nothing in the output depends on the thread count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Curve, DisorderSection, DisorderStrength, RunConfig};
use crate::error::{Error, Result};
use crate::linear::{lower_polariton_peak, spectrum, transmission};
use crate::numerics::linspace;
use crate::oracle::{fit_bath, g2_oracle, oracle_transmission, BathDiscretization, OracleOptions, OracleSystem};
use crate::selfenergy::{
    calibrate_sigma, kk_residual, resubstitution_residual, scba_self_energy, DisorderParams, ScbaOptions,
    SelfEnergyTable,
};
use crate::twophoton::{g2_polariton, resolve_drive, FftOptions, TauGrid, TwoPhotonResult};
use crate::SystemParams;

/// Pointwise g² tolerance of the oracle comparison, relative to max(1, g²).
pub const ORACLE_G2_TOLERANCE: f64 = 0.05;
/// Transmission tolerance of the oracle comparison, relative to max |t|.
pub const ORACLE_T_TOLERANCE: f64 = 0.02;

/// Half width, in LP linewidths, of the window for the oracle transmission.
const ORACLE_T_HALF_WIDTH: f64 = 5.0;
const ORACLE_T_POINTS: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SelfEnergy,
    Spectrum,
    G2,
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SelfEnergy => "selfenergy",
            Command::Spectrum => "spectrum",
            Command::G2 => "g2",
            Command::OracleCheck => "oracle-check",
        }
    }
}

/// Paths written by a run, relative to the output directory, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
}

/// Disorder parameters and SCBA table for a `[disorder]` section, with the
/// grid refined by `refine` (1 keeps it).
pub fn disorder_table(d: &DisorderSection, refine: usize) -> Result<(DisorderParams, SelfEnergyTable)> {
    let opts = ScbaOptions::default();
    let (dp, tbl) = match d.strength {
        DisorderStrength::DeltaDis(target) => calibrate_sigma(target, 1e-6 * target, &opts)?,
        DisorderStrength::Sigma(s) => {
            let mut dp = if d.ec_equals_sigma {
                DisorderParams::correlated(s)?
            } else {
                let e_c = d
                    .e_c
                    .ok_or_else(|| Error::Config("[disorder] ec_equals_sigma = false needs e_c_meV".into()))?;
                DisorderParams::new(s, e_c)?
            };
            if let Some(g) = d.grid {
                dp = dp.with_grid(g)?;
            }
            let tbl = scba_self_energy(&dp, &opts)?;
            (dp, tbl)
        }
    };
    if refine <= 1 {
        return Ok((dp, tbl));
    }
    let fine = dp.with_grid(dp.grid.refined(refine)?)?;
    let tbl = scba_self_energy(&fine, &opts)?;
    Ok((fine, tbl))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::write(out.join(name), contents)?;
    Ok(PathBuf::from(name))
}

fn write_json(out: &Path, name: &str, v: &serde_json::Value) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    write(out, name, &s)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `manifest.tsv` for `files` (relative to `out`).
fn write_manifest(out: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    files.sort();
    files.dedup();
    let mut s = String::new();
    for f in files.iter() {
        let bytes = std::fs::read(out.join(f))?;
        let stem = f.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
        // Sidecars share their curve's stem.
        let name = match f.extension().and_then(|e| e.to_str()) {
            Some("json") => format!("{stem}_meta"),
            _ => stem,
        };
        s.push_str(&format!("{name}\t{}\t{}\n", f.display(), sha256_hex(&bytes)));
    }
    std::fs::write(out.join("manifest.tsv"), s)?;
    Ok(())
}

fn curve_params(cfg: &RunConfig, c: &Curve) -> Result<SystemParams> {
    c.system.params(cfg.drive)
}

fn table_for<'a>(c: &Curve, tbl: Option<&'a SelfEnergyTable>) -> Option<&'a SelfEnergyTable> {
    if c.disorder {
        tbl
    } else {
        None
    }
}

fn tau_grid(cfg: &RunConfig, p: &SystemParams, tbl: Option<&SelfEnergyTable>) -> Result<TauGrid> {
    let (_, gamma) = resolve_drive(p, tbl)?;
    TauGrid::new(cfg.g2.tau_max.unwrap_or(20.0 / gamma), cfg.g2.n_tau)
}

fn g2_for(cfg: &RunConfig, c: &Curve, tbl: Option<&SelfEnergyTable>) -> Result<TwoPhotonResult> {
    let p = curve_params(cfg, c)?;
    let tbl = table_for(c, tbl);
    let tau = tau_grid(cfg, &p, tbl)?;
    g2_polariton(&p, tbl, Some(tau), &FftOptions::default())
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `cmd` and writes its outputs into `out` (created if missing).
pub fn run(cmd: Command, cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let mut files = vec![write(out, "resolved_config.ini", &cfg.to_ini())?];
    let produced = in_pool(jobs, || match cmd {
        Command::SelfEnergy => run_selfenergy(cfg, out),
        Command::Spectrum => run_spectrum(cfg, out),
        Command::G2 => run_g2(cfg, out),
        Command::OracleCheck => run_oracle_check(cfg, out),
    })??;
    files.extend(produced);
    write_manifest(out, &mut files)?;
    files.push(PathBuf::from("manifest.tsv"));
    Ok(RunSummary { files })
}

fn needs_table(cfg: &RunConfig) -> Result<Option<SelfEnergyTable>> {
    match &cfg.disorder {
        Some(d) if cfg.curves.iter().any(|c| c.disorder) => Ok(Some(disorder_table(d, 1)?.1)),
        _ => Ok(None),
    }
}

fn run_selfenergy(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let d = cfg
        .disorder
        .as_ref()
        .ok_or_else(|| Error::Config("selfenergy needs a [disorder] section".into()))?;
    let (dp, tbl) = disorder_table(d, 1)?;
    let meta = json!({
        "sigma_meV": dp.sigma,
        "e_c_meV": dp.e_c,
        "ec_equals_sigma": dp.ec_equals_sigma,
        "grid": {
            "omega_min_meV": dp.grid.omega_min,
            "omega_max_meV": dp.grid.omega_max,
            "n_points": dp.grid.n_points,
        },
        "delta_dis_meV": tbl.delta_dis,
        "resubstitution_residual_meV": resubstitution_residual(&tbl),
        "kk_residual_meV": kk_residual(&tbl),
        "max_iterations": tbl.iterations.iter().max(),
    });
    Ok(vec![
        write(out, "selfenergy.csv", &tbl.to_csv())?,
        write(out, "selfenergy_convergence.csv", &tbl.convergence_csv())?,
        write_json(out, "selfenergy.json", &meta)?,
    ])
}

fn run_spectrum(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let table = needs_table(cfg)?;
    let per_curve: Vec<Result<Vec<PathBuf>>> = cfg
        .curves
        .par_iter()
        .map(|c| {
            let p = curve_params(cfg, c)?;
            let tbl = table_for(c, table.as_ref());
            let grid = match cfg.spectrum.window {
                Some((a, b)) => linspace(a, b, cfg.spectrum.n_points),
                None => {
                    let lp = lower_polariton_peak(&p, tbl)?;
                    let fw = lp.fwhm.ok_or_else(|| {
                        Error::NoResonance(format!("curve '{}': lower-polariton width not found", c.name))
                    })?;
                    let half = cfg.spectrum.auto_half_width * fw;
                    linspace(lp.omega_peak - half, lp.omega_peak + half, cfg.spectrum.n_points)
                }
            };
            let s = spectrum(&grid, &p, tbl, None)?;
            let mut meta = s.sidecar();
            meta["curve"] = json!(c.name);
            meta["disorder"] = json!(c.disorder);
            Ok(vec![
                write(out, &format!("spectrum_{}.csv", c.name), &s.to_csv())?,
                write_json(out, &format!("spectrum_{}.json", c.name), &meta)?,
            ])
        })
        .collect();
    flatten(per_curve)
}

fn flatten(parts: Vec<Result<Vec<PathBuf>>>) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in parts {
        files.extend(p?);
    }
    Ok(files)
}

fn g2_sidecar(r: &TwoPhotonResult, c: &Curve) -> serde_json::Value {
    let mut meta = r.sidecar();
    meta["curve"] = json!(c.name);
    meta["disorder"] = json!(c.disorder);
    meta["u_meV"] = json!(c.system.u);
    meta["g_c_meV"] = json!(c.system.g_c);
    meta["kappa_c_meV"] = json!(c.system.kappa_c);
    meta["delta_c_meV"] = json!(c.system.delta_c);
    meta["gamma_d_meV"] = json!(c.system.gamma_d);
    meta
}

fn run_g2(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let table = needs_table(cfg)?;
    let per_curve: Vec<Result<Vec<PathBuf>>> = cfg
        .curves
        .par_iter()
        .map(|c| {
            let r = g2_for(cfg, c, table.as_ref())?;
            Ok(vec![
                write(out, &format!("g2_{}.csv", c.name), &r.to_csv())?,
                write_json(out, &format!("g2_{}.json", c.name), &g2_sidecar(&r, c))?,
            ])
        })
        .collect();
    flatten(per_curve)
}

/// Oracle comparison for one curve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleComparison {
    pub curve: String,
    pub n_modes: usize,
    pub reconstruction_error: f64,
    pub g2_0_frequency_domain: f64,
    pub g2_0_oracle: f64,
    /// max_τ |g² − g²_oracle| / max(1, g²_oracle).
    pub g2_max_deviation: f64,
    /// max |t − t_oracle| / max |t| over the LP window.
    pub transmission_max_deviation: f64,
    pub g2_within_tolerance: bool,
    pub transmission_within_tolerance: bool,
}

/// Frequency-domain and oracle results for one curve.
pub struct OracleRun {
    pub frequency_domain: TwoPhotonResult,
    pub oracle: TwoPhotonResult,
    /// `(ω, t_linear, t_oracle)` over the LP window.
    pub transmission: Vec<(f64, crate::C64, crate::C64)>,
    pub comparison: OracleComparison,
}

/// Compares the frequency-domain pipeline (using `table`) with the oracle
/// (using a bath fitted to `fine_table`) for one curve.
pub fn compare_with_oracle(
    cfg: &RunConfig,
    c: &Curve,
    table: Option<&SelfEnergyTable>,
    fine_table: Option<&SelfEnergyTable>,
) -> Result<OracleRun> {
    let p = curve_params(cfg, c)?;
    let tbl = table_for(c, table);
    let fd = g2_for(cfg, c, table)?;
    let bath = match table_for(c, fine_table) {
        Some(t) => fit_bath(t, cfg.oracle.n_modes)?,
        None => BathDiscretization::from_modes(Vec::new(), Vec::new())?,
    };
    let sys = OracleSystem::polariton(&p, &bath)?;
    let tau = TauGrid::new(*fd.tau.last().expect("tau grid is never empty"), fd.tau.len())?;
    let or = g2_oracle(&tau, &sys, p.u_xx, fd.omega_l, &OracleOptions::default())?;
    let g2_dev = fd
        .g2
        .iter()
        .zip(&or.g2)
        .map(|(a, b)| (a - b).abs() / b.max(1.0))
        .fold(0.0, f64::max);

    let lp = lower_polariton_peak(&p, tbl)?;
    let fw = lp
        .fwhm
        .ok_or_else(|| Error::NoResonance(format!("curve '{}': lower-polariton width not found", c.name)))?;
    let half = ORACLE_T_HALF_WIDTH * fw;
    let mut t_rows = Vec::with_capacity(ORACLE_T_POINTS);
    for w in linspace(lp.omega_peak - half, lp.omega_peak + half, ORACLE_T_POINTS) {
        t_rows.push((w, transmission(w, &p, tbl), oracle_transmission(w, &sys)?));
    }
    let t_max = t_rows.iter().map(|r| r.1.norm()).fold(0.0, f64::max);
    let t_dev = t_rows.iter().map(|r| (r.1 - r.2).norm()).fold(0.0, f64::max) / t_max;

    let comparison = OracleComparison {
        curve: c.name.clone(),
        n_modes: bath.n_modes(),
        reconstruction_error: bath.reconstruction_error,
        g2_0_frequency_domain: fd.g2[0],
        g2_0_oracle: or.g2[0],
        g2_max_deviation: g2_dev,
        transmission_max_deviation: t_dev,
        g2_within_tolerance: g2_dev <= ORACLE_G2_TOLERANCE,
        transmission_within_tolerance: t_dev <= ORACLE_T_TOLERANCE,
    };
    Ok(OracleRun {
        frequency_domain: fd,
        oracle: or,
        transmission: t_rows,
        comparison,
    })
}

fn transmission_csv(rows: &[(f64, crate::C64, crate::C64)]) -> String {
    let mut s = String::from("omega_meV,re_t,im_t,T,R\n");
    for (w, _, t) in rows {
        let r = *t - 1.0;
        s.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            w,
            t.re,
            t.im,
            t.norm_sqr(),
            r.norm_sqr()
        ));
    }
    s
}

fn run_oracle_check(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (table, fine) = match &cfg.disorder {
        Some(d) if cfg.curves.iter().any(|c| c.disorder) => {
            let (_, coarse) = disorder_table(d, 1)?;
            let (_, fine) = disorder_table(d, cfg.oracle.grid_refinement)?;
            (Some(coarse), Some(fine))
        }
        _ => (None, None),
    };
    let runs: Vec<Result<(Vec<PathBuf>, OracleComparison)>> = cfg
        .curves
        .par_iter()
        .map(|c| {
            let r = compare_with_oracle(cfg, c, table.as_ref(), fine.as_ref())?;
            let files = vec![
                write(out, &format!("g2_{}.csv", c.name), &r.frequency_domain.to_csv())?,
                write(out, &format!("oracle_g2_{}.csv", c.name), &r.oracle.to_csv())?,
                write(out, &format!("oracle_spectrum_{}.csv", c.name), &transmission_csv(&r.transmission))?,
            ];
            Ok((files, r.comparison))
        })
        .collect();
    let mut files = Vec::new();
    let mut report = Vec::new();
    for r in runs {
        let (f, cmp) = r?;
        files.extend(f);
        report.push(cmp);
    }
    let all_g2 = report.iter().all(|r| r.g2_within_tolerance);
    let all_t = report.iter().all(|r| r.transmission_within_tolerance);
    let doc = json!({
        "g2_tolerance": ORACLE_G2_TOLERANCE,
        "transmission_tolerance": ORACLE_T_TOLERANCE,
        "grid_refinement": cfg.oracle.grid_refinement,
        "all_g2_within_tolerance": all_g2,
        "all_transmission_within_tolerance": all_t,
        "curves": report,
    });
    files.push(write_json(out, "oracle_report.json", &doc)?);
    Ok(files)
}
