//! Result contract shared by PMACE and the baseline methods.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::metrics::{aligned_nrmse, ConvergenceTrace, Region};
use crate::solver::PmaceConfig;
use crate::{ComplexImage, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pmace,
    Epie,
    Awf,
    Sharp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pmace, Method::Epie, Method::Awf, Method::Sharp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pmace => "pmace",
            Method::Epie => "epie",
            Method::Awf => "awf",
            Method::Sharp => "sharp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmace" => Ok(Method::Pmace),
            "epie" => Ok(Method::Epie),
            "awf" => Ok(Method::Awf),
            "sharp" => Ok(Method::Sharp),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Configuration snapshot stored with every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum MethodConfig {
    Pmace(PmaceConfig),
    Baseline(BaselineConfig),
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Pmace(_) => Method::Pmace,
            MethodConfig::Baseline(b) => b.method,
        }
    }

    /// The single tuning parameter: α for PMACE, the baseline tunable
    /// otherwise.
    pub fn tunable(&self) -> f64 {
        match self {
            MethodConfig::Pmace(p) => p.alpha,
            MethodConfig::Baseline(b) => b.tunable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Pmace(p) => p.validate(),
            MethodConfig::Baseline(b) => b.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub method: Method,
    /// Final image estimate; zero outside the scan coverage.
    pub image: ComplexImage,
    pub trace: ConvergenceTrace,
    pub iterations_run: usize,
    pub converged: bool,
    /// 2D FFTs performed by the solver (excluding setup that needs none).
    pub fft_calls: u64,
    pub config: MethodConfig,
}

impl ReconstructionResult {
    pub fn final_nrmse(&self) -> Option<f64> {
        self.trace.final_nrmse()
    }
}

/// Ground truth used to trace NRMSE while a solver runs.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub image: &'a ComplexImage,
    pub region: &'a Region,
}

impl<'a> Reference<'a> {
    pub fn new(image: &'a ComplexImage, region: &'a Region) -> Self {
        Self { image, region }
    }

    pub fn nrmse(&self, xhat: &ComplexImage) -> Result<f64> {
        aligned_nrmse(xhat, self.image, self.region)
    }
}
