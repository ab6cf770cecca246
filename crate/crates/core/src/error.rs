use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("self-energy grid too coarse: {points_per_ec:.2} points per E_c (need at least 8)")]
    GridTooCoarse { points_per_ec: f64 },

    #[error("fixed point did not converge at {failures} frequencies; worst at omega = {worst_omega} meV (|update| = {worst_update:e} meV after {iterations} iterations)")]
    NoConvergence {
        failures: usize,
        worst_omega: f64,
        worst_update: f64,
        iterations: usize,
    },

    #[error("causality violation: Im Sigma = {im_sigma:e} meV > 0 at omega = {omega} meV")]
    Causality { omega: f64, im_sigma: f64 },

    #[error("could not bracket sigma for delta_dis = {target} meV; scanned sigma in [{lo}, {hi}] meV")]
    Bracket { target: f64, lo: f64, hi: f64 },

    #[error("integration tail {tail:e} exceeds 1% of the integral {total:e}; extend the window")]
    TailTooLarge { tail: f64, total: f64 },

    #[error("quadrature did not reach tolerance: estimated error {error:e}")]
    Quadrature { error: f64 },

    #[error("drive point is dark: |t|^2 = {transmission:e} < 1e-6 at omega_L = {omega_l} meV")]
    DarkDrive { omega_l: f64, transmission: f64 },

    #[error("no resonance found: {0}")]
    NoResonance(String),

    #[error("bath reconstruction error {error:.4} of delta_dis exceeds 0.02; use more modes (currently {n_modes})")]
    BathReconstruction { error: f64, n_modes: usize },

    #[error("time step {step} exceeds the Nyquist limit {limit} for the fastest frequency")]
    Nyquist { step: f64, limit: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::GridTooCoarse { .. } => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidParameter(_) | Error::GridTooCoarse { .. } => "invalid-parameter",
            Error::Io(_) => "io",
            _ => "numerical",
        }
    }
}
