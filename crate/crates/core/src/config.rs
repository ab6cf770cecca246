//! Run configuration.
//!
//! INI-style files with `key = value` lines and `#` comment lines:
//!
//! ```ini
//! [system]
//! g_c_meV = 20
//! kappa_c_meV = 0.1
//! delta_c_meV = 100
//!
//! [disorder]
//! delta_dis_meV = 1
//!
//! [curve red]
//! u_meV = 0.02
//! ```
//!
//! Every key is checked against the section it appears in. `[curve NAME]`
//! sections each describe one output curve, overriding `[system]` values
//! and optionally switching the disorder table off. A preset is a base
//! layer; a user file on top of it overrides individual keys, and replaces
//! the preset's curve list if it has any curves of its own.

use std::fmt::Write as _;
use std::path::PathBuf;

use ini::{Ini, ParseOption};

use crate::error::{Error, Result};
use crate::model::{Drive, SystemParams};
use crate::selfenergy::GridSpec;

const FIG2: &str = include_str!("../presets/fig2.ini");
const FIG3: &str = include_str!("../presets/fig3.ini");

/// Built-in parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig2,
    Fig3,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected fig2 or fig3)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            Preset::Fig2 => FIG2,
            Preset::Fig3 => FIG3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSection {
    pub g_c: f64,
    pub kappa_c: f64,
    pub delta_c: f64,
    pub gamma_d: f64,
    pub u: f64,
}

impl SystemSection {
    pub fn params(&self, drive: Drive) -> Result<SystemParams> {
        Ok(SystemParams::new(self.g_c, self.kappa_c, self.delta_c, self.gamma_d, self.u)?.with_drive(drive))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisorderStrength {
    /// Calibrate σ so the SCBA table reaches this δ_dis (meV).
    DeltaDis(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSection {
    pub strength: DisorderStrength,
    pub ec_equals_sigma: bool,
    pub e_c: Option<f64>,
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSection {
    /// Explicit window; `None` centres each curve on its lower polariton.
    pub window: Option<(f64, f64)>,
    /// Half width of the automatic window in units of the LP FWHM.
    pub auto_half_width: f64,
    pub n_points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            window: None,
            auto_half_width: 20.0,
            n_points: 2001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Section {
    /// ħ/meV; `None` means 20/Γ_LP.
    pub tau_max: Option<f64>,
    pub n_tau: usize,
}

impl Default for G2Section {
    fn default() -> Self {
        G2Section { tau_max: None, n_tau: 2048 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSection {
    pub n_modes: usize,
    /// The bath is fitted to a table on a grid this many times finer.
    pub grid_refinement: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            n_modes: 300,
            grid_refinement: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub system: SystemSection,
    /// Use the `[disorder]` table for this curve.
    pub disorder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemSection,
    pub disorder: Option<DisorderSection>,
    pub drive: Drive,
    pub spectrum: SpectrumSection,
    pub g2: G2Section,
    pub oracle: OracleSection,
    pub output: Option<PathBuf>,
    /// Never empty: without `[curve]` sections there is one curve, `main`.
    pub curves: Vec<Curve>,
}

type Raw = Vec<(String, Vec<(String, String)>)>;

fn parse_raw(text: &str, origin: &str) -> Result<Raw> {
    let opt = ParseOption {
        enabled_quote: false,
        enabled_escape: false,
        ..Default::default()
    };
    let ini = Ini::load_from_str_opt(text, opt).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    let mut raw: Raw = Vec::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if props.iter().next().is_some() {
                return Err(Error::Config(format!("{origin}: keys before the first section")));
            }
            continue;
        };
        let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
        if raw.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("{origin}: section [{name}] appears twice")));
        }
        let mut kv: Vec<(String, String)> = Vec::new();
        for (k, v) in props.iter() {
            if kv.iter().any(|(kk, _)| kk == k) {
                return Err(Error::Config(format!("{origin}: key '{k}' repeated in [{name}]")));
            }
            kv.push((k.to_string(), v.trim().to_string()));
        }
        raw.push((name, kv));
    }
    Ok(raw)
}

fn is_curve(section: &str) -> bool {
    section.starts_with("curve ")
}

fn overlay(base: Raw, top: Raw) -> Raw {
    let top_has_curves = top.iter().any(|(n, _)| is_curve(n));
    let mut out: Raw = base
        .into_iter()
        .filter(|(n, _)| !(top_has_curves && is_curve(n)))
        .collect();
    for (name, kv) in top {
        match out.iter_mut().find(|(n, _)| *n == name) {
            Some((_, existing)) => {
                for (k, v) in kv {
                    match existing.iter_mut().find(|(kk, _)| *kk == k) {
                        Some(slot) => slot.1 = v,
                        None => existing.push((k, v)),
                    }
                }
            }
            None => out.push((name, kv)),
        }
    }
    out
}

/// Key lookup that remembers which keys were consumed.
struct Section<'a> {
    name: &'a str,
    kv: &'a [(String, String)],
    used: Vec<bool>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, kv: &'a [(String, String)]) -> Self {
        Section {
            name,
            kv,
            used: vec![false; kv.len()],
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let i = self.kv.iter().position(|(k, _)| k == key)?;
        self.used[i] = true;
        Some(self.kv[i].1.as_str())
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        let name = self.name;
        self.raw(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("[{name}] {key}: expected a number, got '{v}'")))
            })
            .transpose()
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        let name = self.name;
        self.raw(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("[{name}] {key}: expected a count, got '{v}'")))
            })
            .transpose()
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        let name = self.name;
        self.raw(key)
            .map(|v| match v {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("[{name}] {key}: expected true or false, got '{v}'"))),
            })
            .transpose()
    }

    fn required(&mut self, key: &str) -> Result<f64> {
        self.f64(key)?
            .ok_or_else(|| Error::Config(format!("[{}] is missing {key}", self.name)))
    }

    fn finish(self) -> Result<()> {
        match self.kv.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some(((k, _), _)) => Err(Error::Config(format!("unknown key '{k}' in [{}]", self.name))),
            None => Ok(()),
        }
    }
}

fn system_overrides(sec: &mut Section, base: SystemSection) -> Result<SystemSection> {
    Ok(SystemSection {
        g_c: sec.f64("g_c_meV")?.unwrap_or(base.g_c),
        kappa_c: sec.f64("kappa_c_meV")?.unwrap_or(base.kappa_c),
        delta_c: sec.f64("delta_c_meV")?.unwrap_or(base.delta_c),
        gamma_d: sec.f64("gamma_d_meV")?.unwrap_or(base.gamma_d),
        u: sec.f64("u_meV")?.unwrap_or(base.u),
    })
}

fn interpret(raw: &Raw) -> Result<RunConfig> {
    let get = |name: &str| raw.iter().find(|(n, _)| n == name).map(|(_, kv)| kv.as_slice());
    for (name, _) in raw {
        let known = matches!(
            name.as_str(),
            "system" | "disorder" | "drive" | "spectrum" | "g2" | "oracle" | "output"
        );
        if !known && !is_curve(name) {
            return Err(Error::Config(format!("unknown section [{name}]")));
        }
    }

    let kv = get("system").ok_or_else(|| Error::Config("missing [system] section".into()))?;
    let mut sec = Section::new("system", kv);
    let system = SystemSection {
        g_c: sec.required("g_c_meV")?,
        kappa_c: sec.required("kappa_c_meV")?,
        delta_c: sec.required("delta_c_meV")?,
        gamma_d: sec.f64("gamma_d_meV")?.unwrap_or(0.0),
        u: sec.f64("u_meV")?.unwrap_or(0.0),
    };
    sec.finish()?;

    let disorder = match get("disorder") {
        None => None,
        Some(kv) => {
            let mut sec = Section::new("disorder", kv);
            let strength = match (sec.f64("delta_dis_meV")?, sec.f64("sigma_meV")?) {
                (Some(d), None) => DisorderStrength::DeltaDis(d),
                (None, Some(s)) => DisorderStrength::Sigma(s),
                _ => {
                    return Err(Error::Config(
                        "[disorder] needs exactly one of delta_dis_meV and sigma_meV".into(),
                    ))
                }
            };
            let ec_equals_sigma = sec.bool("ec_equals_sigma")?.unwrap_or(true);
            let e_c = sec.f64("e_c_meV")?;
            let grid = match (
                sec.f64("grid_omega_min_meV")?,
                sec.f64("grid_omega_max_meV")?,
                sec.usize("grid_points")?,
            ) {
                (None, None, None) => None,
                (Some(a), Some(b), Some(n)) => Some(GridSpec::new(a, b, n)?),
                _ => {
                    return Err(Error::Config(
                        "[disorder] grid needs grid_omega_min_meV, grid_omega_max_meV and grid_points together".into(),
                    ))
                }
            };
            sec.finish()?;
            match (ec_equals_sigma, e_c, strength) {
                (true, Some(_), _) => {
                    return Err(Error::Config("[disorder] e_c_meV given but ec_equals_sigma = true".into()))
                }
                (false, None, _) => {
                    return Err(Error::Config("[disorder] ec_equals_sigma = false needs e_c_meV".into()))
                }
                (false, _, DisorderStrength::DeltaDis(_)) => {
                    return Err(Error::Config("[disorder] delta_dis_meV calibration requires ec_equals_sigma = true".into()))
                }
                (_, _, DisorderStrength::DeltaDis(_)) if grid.is_some() => {
                    return Err(Error::Config("[disorder] delta_dis_meV calibration uses the default grid".into()))
                }
                _ => {}
            }
            Some(DisorderSection {
                strength,
                ec_equals_sigma,
                e_c,
                grid,
            })
        }
    };

    let drive = match get("drive") {
        None => Drive::default(),
        Some(kv) => {
            let mut sec = Section::new("drive", kv);
            let d = match sec.raw("omega_L_meV") {
                None | Some("auto-lp") => Drive::LowerPolaritonPeak,
                Some("lp-pole") => Drive::LowerPolaritonPole,
                Some(v) => Drive::At(v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    Error::Config(format!("[drive] omega_L_meV: expected a number, auto-lp or lp-pole, got '{v}'"))
                })?),
            };
            sec.finish()?;
            d
        }
    };

    let mut spectrum = SpectrumSection::default();
    if let Some(kv) = get("spectrum") {
        let mut sec = Section::new("spectrum", kv);
        spectrum.window = match (sec.f64("omega_min_meV")?, sec.f64("omega_max_meV")?) {
            (None, None) => None,
            (Some(a), Some(b)) if b > a => Some((a, b)),
            _ => return Err(Error::Config("[spectrum] needs omega_min_meV < omega_max_meV, both or neither".into())),
        };
        if let Some(h) = sec.f64("auto_half_width_fwhm")? {
            spectrum.auto_half_width = h;
        }
        if let Some(n) = sec.usize("n_points")? {
            spectrum.n_points = n;
        }
        sec.finish()?;
        if spectrum.n_points < 3 || !(spectrum.auto_half_width > 0.0) {
            return Err(Error::Config("[spectrum] needs n_points >= 3 and auto_half_width_fwhm > 0".into()));
        }
    }

    let mut g2 = G2Section::default();
    if let Some(kv) = get("g2") {
        let mut sec = Section::new("g2", kv);
        g2.tau_max = match sec.raw("tau_max") {
            None | Some("auto") => None,
            Some(v) => Some(v.parse::<f64>().ok().filter(|x| *x > 0.0 && x.is_finite()).ok_or_else(|| {
                Error::Config(format!("[g2] tau_max: expected a positive number or auto, got '{v}'"))
            })?),
        };
        if let Some(n) = sec.usize("n_tau")? {
            g2.n_tau = n;
        }
        sec.finish()?;
        if g2.n_tau < 2 {
            return Err(Error::Config("[g2] n_tau must be at least 2".into()));
        }
    }

    let mut oracle = OracleSection::default();
    if let Some(kv) = get("oracle") {
        let mut sec = Section::new("oracle", kv);
        if let Some(n) = sec.usize("n_modes")? {
            oracle.n_modes = n;
        }
        if let Some(r) = sec.usize("grid_refinement")? {
            oracle.grid_refinement = r;
        }
        sec.finish()?;
        if oracle.n_modes < 50 || oracle.grid_refinement == 0 {
            return Err(Error::Config("[oracle] needs n_modes >= 50 and grid_refinement >= 1".into()));
        }
    }

    let output = match get("output") {
        None => None,
        Some(kv) => {
            let mut sec = Section::new("output", kv);
            let d = sec.raw("directory").map(PathBuf::from);
            sec.finish()?;
            d
        }
    };

    let mut curves = Vec::new();
    for (name, kv) in raw.iter().filter(|(n, _)| is_curve(n)) {
        let label = name["curve ".len()..].trim();
        if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
            return Err(Error::Config(format!(
                "curve name '{label}' must be non-empty and use only letters, digits, '.', '_' or '-'"
            )));
        }
        let mut sec = Section::new(name, kv);
        let sys = system_overrides(&mut sec, system)?;
        let use_disorder = sec.bool("disorder")?.unwrap_or(disorder.is_some());
        sec.finish()?;
        if use_disorder && disorder.is_none() {
            return Err(Error::Config(format!("curve '{label}' asks for disorder but there is no [disorder] section")));
        }
        curves.push(Curve {
            name: label.to_string(),
            system: sys,
            disorder: use_disorder,
        });
    }
    if curves.is_empty() {
        curves.push(Curve {
            name: "main".into(),
            system,
            disorder: disorder.is_some(),
        });
    }

    let cfg = RunConfig {
        system,
        disorder,
        drive,
        spectrum,
        g2,
        oracle,
        output,
        curves,
    };
    for c in &cfg.curves {
        c.system
            .params(cfg.drive)
            .map_err(|e| Error::Config(format!("curve '{}': {e}", c.name)))?;
    }
    Ok(cfg)
}

impl RunConfig {
    /// Parses a single configuration file.
    pub fn parse(text: &str) -> Result<Self> {
        interpret(&parse_raw(text, "config")?)
    }

    /// Parses `user` on top of an optional preset.
    pub fn layered(preset: Option<Preset>, user: Option<&str>) -> Result<Self> {
        let base = match preset {
            Some(p) => parse_raw(p.text(), p.name())?,
            None => Vec::new(),
        };
        let top = match user {
            Some(t) => parse_raw(t, "config")?,
            None => Vec::new(),
        };
        if preset.is_none() && user.is_none() {
            return Err(Error::Config("need a config file or a preset".into()));
        }
        interpret(&overlay(base, top))
    }

    /// Fully explicit configuration text; parsing it gives back `self`.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let sys = |s: &mut String, v: &SystemSection| {
            let _ = writeln!(s, "g_c_meV = {}", v.g_c);
            let _ = writeln!(s, "kappa_c_meV = {}", v.kappa_c);
            let _ = writeln!(s, "delta_c_meV = {}", v.delta_c);
            let _ = writeln!(s, "gamma_d_meV = {}", v.gamma_d);
            let _ = writeln!(s, "u_meV = {}", v.u);
        };
        s.push_str("[system]\n");
        sys(&mut s, &self.system);
        if let Some(d) = &self.disorder {
            s.push_str("\n[disorder]\n");
            match d.strength {
                DisorderStrength::DeltaDis(x) => {
                    let _ = writeln!(s, "delta_dis_meV = {x}");
                }
                DisorderStrength::Sigma(x) => {
                    let _ = writeln!(s, "sigma_meV = {x}");
                }
            }
            let _ = writeln!(s, "ec_equals_sigma = {}", d.ec_equals_sigma);
            if let Some(e) = d.e_c {
                let _ = writeln!(s, "e_c_meV = {e}");
            }
            if let Some(g) = &d.grid {
                let _ = writeln!(s, "grid_omega_min_meV = {}", g.omega_min);
                let _ = writeln!(s, "grid_omega_max_meV = {}", g.omega_max);
                let _ = writeln!(s, "grid_points = {}", g.n_points);
            }
        }
        s.push_str("\n[drive]\n");
        match self.drive {
            Drive::At(w) => {
                let _ = writeln!(s, "omega_L_meV = {w}");
            }
            Drive::LowerPolaritonPeak => s.push_str("omega_L_meV = auto-lp\n"),
            Drive::LowerPolaritonPole => s.push_str("omega_L_meV = lp-pole\n"),
        }
        s.push_str("\n[spectrum]\n");
        if let Some((a, b)) = self.spectrum.window {
            let _ = writeln!(s, "omega_min_meV = {a}");
            let _ = writeln!(s, "omega_max_meV = {b}");
        }
        let _ = writeln!(s, "auto_half_width_fwhm = {}", self.spectrum.auto_half_width);
        let _ = writeln!(s, "n_points = {}", self.spectrum.n_points);
        s.push_str("\n[g2]\n");
        match self.g2.tau_max {
            Some(t) => {
                let _ = writeln!(s, "tau_max = {t}");
            }
            None => s.push_str("tau_max = auto\n"),
        }
        let _ = writeln!(s, "n_tau = {}", self.g2.n_tau);
        s.push_str("\n[oracle]\n");
        let _ = writeln!(s, "n_modes = {}", self.oracle.n_modes);
        let _ = writeln!(s, "grid_refinement = {}", self.oracle.grid_refinement);
        if let Some(o) = &self.output {
            let _ = writeln!(s, "\n[output]\ndirectory = {}", o.display());
        }
        for c in &self.curves {
            let _ = writeln!(s, "\n[curve {}]", c.name);
            sys(&mut s, &c.system);
            let _ = writeln!(s, "disorder = {}", c.disorder);
        }
        s
    }
}
