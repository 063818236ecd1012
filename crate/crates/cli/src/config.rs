use std::path::{Path, PathBuf};

use gasgiant::metric::GasGiantMetric;
use gasgiant::xray::injectivity::BasisSpec;
use serde::Deserialize;

use crate::error::{CliError, Result};

/// A batch of experiments sharing an output directory and a default seed.
#[derive(Debug, Clone, Deserialize)]
pub struct BatchConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub experiments: Vec<ExperimentConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Metric description file, relative to the config file.
    #[serde(default)]
    pub metric: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(flatten)]
    pub kind: ExperimentKind,
}

/// Exponent ladder 2^{-k}, k = k_min..=k_max.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Ladder {
    pub k_min: i32,
    pub k_max: i32,
}

impl Ladder {
    pub fn range(&self) -> std::ops::RangeInclusive<i32> {
        self.k_min..=self.k_max
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.k_min > self.k_max {
            return Err(CliError::Config(format!("{what} ladder {}..={} is empty", self.k_min, self.k_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CPrimeReference {
    #[default]
    Quoted,
    Derived,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    CurvatureLaw {
        s_values: Vec<f64>,
        #[serde(default)]
        y: Option<Vec<f64>>,
    },
    ExitTime {
        ladder: Ladder,
        #[serde(default)]
        y0: Option<Vec<f64>>,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    ExpansionConstants {
        apex_x: f64,
        #[serde(default)]
        c_prime_reference: CPrimeReference,
    },
    BoundaryDistance {
        ladder: Ladder,
        #[serde(default)]
        y_center: Option<Vec<f64>>,
    },
    Hausdorff {
        n_min: f64,
        n_max: f64,
        count: usize,
    },
    Scattering {
        y1: Vec<f64>,
        eta1: Vec<f64>,
    },
    XrayInjectivity {
        basis: BasisSpec,
        rays: usize,
        resamples: usize,
        #[serde(default = "default_band")]
        band: f64,
    },
    PestovBalance {
        grid: usize,
        x: (f64, f64),
        y: (f64, f64),
        eps: Vec<f64>,
        #[serde(default = "default_face_ny")]
        ny: usize,
        #[serde(default = "default_face_ntheta")]
        ntheta: usize,
    },
    SpectrumRate {
        #[serde(default)]
        mu_mode: f64,
        ladder: Ladder,
        k: usize,
        #[serde(default = "default_cells")]
        cells: usize,
    },
    LaneEmdenProfile {
        n_poly: f64,
        #[serde(default = "default_le_dimension")]
        dimension: usize,
    },
}

fn default_band() -> f64 {
    0.2
}

fn default_face_ny() -> usize {
    49
}

fn default_face_ntheta() -> usize {
    384
}

fn default_cells() -> usize {
    1000
}

fn default_le_dimension() -> usize {
    3
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CurvatureLaw { .. } => "curvature_law",
            Self::ExitTime { .. } => "exit_time",
            Self::ExpansionConstants { .. } => "expansion_constants",
            Self::BoundaryDistance { .. } => "boundary_distance",
            Self::Hausdorff { .. } => "hausdorff",
            Self::Scattering { .. } => "scattering",
            Self::XrayInjectivity { .. } => "xray_injectivity",
            Self::PestovBalance { .. } => "pestov_balance",
            Self::SpectrumRate { .. } => "spectrum_rate",
            Self::LaneEmdenProfile { .. } => "lane_emden_profile",
        }
    }

    pub fn needs_metric(&self) -> bool {
        !matches!(self, Self::LaneEmdenProfile { .. })
    }

    pub fn default_tolerance(&self) -> f64 {
        match self {
            Self::CurvatureLaw { .. } | Self::ExitTime { .. } | Self::BoundaryDistance { .. } | Self::LaneEmdenProfile { .. } => 0.01,
            Self::ExpansionConstants { .. } => 0.02,
            Self::Hausdorff { .. } => 0.05,
            Self::Scattering { .. } => 1e-6,
            Self::XrayInjectivity { .. } => 0.0,
            Self::PestovBalance { .. } => 1e-3,
            Self::SpectrumRate { .. } => 0.1,
        }
    }

    /// Checks that need no computation.
    fn check(&self) -> Result<()> {
        let nonempty = |v: &[f64], what: &str| if v.is_empty() { Err(CliError::Config(format!("{what} is empty"))) } else { Ok(()) };
        match self {
            Self::CurvatureLaw { s_values, .. } => nonempty(s_values, "s_values"),
            Self::ExitTime { ladder, .. } => ladder.check("apex"),
            Self::ExpansionConstants { apex_x, .. } if !(*apex_x > 0.0) => Err(CliError::Config("apex_x must be positive".into())),
            Self::BoundaryDistance { ladder, .. } => ladder.check("separation"),
            Self::Hausdorff { n_min, n_max, count } if !(*n_min > 0.0 && n_max > n_min && *count >= 2) => Err(CliError::Config("hausdorff needs 0 < n_min < n_max and count ≥ 2".into())),
            Self::Scattering { y1, eta1 } if y1.is_empty() || y1.len() != eta1.len() => Err(CliError::Config("y1 and eta1 must be nonempty and of equal length".into())),
            Self::XrayInjectivity { rays, resamples, .. } if *rays == 0 || *resamples == 0 => Err(CliError::Config("rays and resamples must be positive".into())),
            Self::PestovBalance { eps, grid, .. } => {
                nonempty(eps, "eps")?;
                if *grid < 8 {
                    return Err(CliError::Config("grid must be at least 8".into()));
                }
                Ok(())
            }
            Self::SpectrumRate { ladder, k, .. } => {
                ladder.check("ε")?;
                if *k == 0 || *k > 20 {
                    return Err(CliError::Config("k must lie in 1..=20".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl BatchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.display().to_string(), source })
    }

    /// Validates every experiment and loads its metric, before anything runs.
    pub fn prepare(&self, base: &Path) -> Result<Vec<Option<GasGiantMetric>>> {
        if self.experiments.is_empty() {
            return Err(CliError::Config("no experiments listed".into()));
        }
        let mut names: Vec<&str> = self.experiments.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!("duplicate experiment name {}", w[0])));
        }
        self.experiments
            .iter()
            .map(|e| {
                if e.name.is_empty() || e.name.contains(['/', '\\']) {
                    return Err(CliError::Config(format!("experiment name {:?} is not a plain file stem", e.name)));
                }
                e.kind.check().map_err(|err| CliError::Config(format!("{}: {err}", e.name)))?;
                match (&e.metric, e.kind.needs_metric()) {
                    (Some(p), _) => {
                        let path = base.join(p);
                        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
                        let m = GasGiantMetric::from_json(&text).map_err(|err| CliError::Config(format!("{}: metric {}: {err}", e.name, path.display())))?;
                        Ok(Some(m))
                    }
                    (None, true) => Err(CliError::Config(format!("{}: a metric file is required for {}", e.name, e.kind.name()))),
                    (None, false) => Ok(None),
                }
            })
            .collect()
    }
}
