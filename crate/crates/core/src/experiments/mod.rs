//! Seeded Monte Carlo harness: experiment configs, runners for the
//! consistency / limit-distribution / exact-recovery / scaled-increment
//! experiments, and the energy-distance two-sample test used for
//! distributional acceptance.
//!
//! Determinism contract: identical configs and master seed produce
//! byte-identical CSV and summary files. Replicate `r` at sample-size index
//! `i` of runner `K` draws from an RNG keyed by
//! `derive(master_seed, [K, i, r])`; no RNG state is shared sequentially.

pub mod distributions;
pub mod energy;
mod report;
mod runs;

pub use distributions::{Distribution, DistributionSpec};
pub use energy::{energy_statistic, energy_test, TwoSampleTestResult};
pub use report::{config_hash, fmt_f64, RunOutput};
pub use runs::{
    run_clt, run_config, run_consistency, run_exact_recovery, run_prop_nonsmooth, CltOutcome,
    ConsistencyOutcome, ConsistencyRow, PropNonsmoothOutcome, RecoveryOutcome, RecoveryRow,
    ScaledIncrementRow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{matrix_from_rows, ConvexSet};
use crate::losses::Loss;
use crate::metric::SpdMetric;
use crate::solver::SolverConfig;
use crate::ustat::{Budget, UKernel};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consistency,
    Clt,
    ExactRecovery,
    PropNonsmooth,
}

/// Either an M-estimation loss or a U-estimation kernel with its budget.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum EstimatorSpec {
    U {
        #[serde(flatten)]
        kernel: UKernel,
        budget: Budget,
    },
    M {
        #[serde(flatten)]
        loss: Loss,
    },
}

impl EstimatorSpec {
    pub fn order(&self) -> usize {
        match self {
            EstimatorSpec::U { kernel, .. } => kernel.order(),
            EstimatorSpec::M { .. } => 1,
        }
    }

    pub fn param_dim(&self, datum_dim: usize) -> Result<usize> {
        match self {
            EstimatorSpec::U { kernel, .. } => {
                if kernel.datum_dim() != datum_dim {
                    return Err(Error::invalid("kernel datum dimension mismatch"));
                }
                Ok(kernel.param_dim())
            }
            EstimatorSpec::M { loss } => loss.param_dim(datum_dim),
        }
    }
}

/// Ambient metric: identity or an explicit SPD matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum MetricSpec {
    #[default]
    Identity,
    Explicit(Vec<Vec<f64>>),
}

impl MetricSpec {
    pub fn build(&self, dim: usize) -> Result<SpdMetric> {
        match self {
            MetricSpec::Identity => Ok(SpdMetric::identity(dim)),
            MetricSpec::Explicit(rows) => {
                let m = SpdMetric::new(matrix_from_rows(rows)?)?;
                if m.dim() != dim {
                    return Err(Error::invalid("metric dimension mismatch"));
                }
                Ok(m)
            }
        }
    }
}

impl Serialize for MetricSpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricSpec::Identity => ser.serialize_str("identity"),
            MetricSpec::Explicit(rows) => {
                use serde::ser::SerializeStruct;
                let mut st = ser.serialize_struct("MetricSpec", 1)?;
                st.serialize_field("s", rows)?;
                st.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for MetricSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Explicit { s: Vec<Vec<f64>> },
        }
        match Raw::deserialize(de)? {
            Raw::Name(s) if s == "identity" => Ok(MetricSpec::Identity),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "metric must be \"identity\" or {{\"s\": [[...]]}}, got {s:?}"
            ))),
            Raw::Explicit { s } => Ok(MetricSpec::Explicit(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub permutations: usize,
    pub alpha: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { permutations: 500, alpha: 0.05 }
    }
}

/// A complete experiment description; one JSON file per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub distribution: DistributionSpec,
    #[serde(flatten)]
    pub estimator: EstimatorSpec,
    pub constraint: ConvexSet,
    #[serde(default)]
    pub metric: MetricSpec,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub test: TestConfig,
    /// Expansion point for the scaled-increment experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Direction for the scaled-increment experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dist = self.distribution.build()?;
        let pd = self.estimator.param_dim(dist.datum_dim())?;
        if self.constraint.dim() != pd {
            return Err(Error::invalid(format!(
                "constraint dimension {} does not match parameter dimension {pd}",
                self.constraint.dim()
            )));
        }
        self.metric.build(pd)?;
        if self.n_grid.is_empty() {
            return Err(Error::invalid("n_grid must be non-empty"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be strictly increasing"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be positive"));
        }
        if self.kind == ExperimentKind::Clt && self.replicates < 50 {
            return Err(Error::invalid("distributional tests need at least 50 replicates"));
        }
        if !(self.test.alpha > 0.0 && self.test.alpha < 1.0) || self.test.permutations == 0 {
            return Err(Error::invalid("test config needs alpha in (0,1) and permutations >= 1"));
        }
        if self.kind == ExperimentKind::PropNonsmooth {
            let theta = self.theta.as_ref().ok_or_else(|| Error::invalid("prop_nonsmooth needs theta"))?;
            let dir = self.direction.as_ref().ok_or_else(|| Error::invalid("prop_nonsmooth needs direction"))?;
            if theta.len() != pd || dir.len() != pd {
                return Err(Error::invalid("theta/direction dimension mismatch"));
            }
        }
        Ok(())
    }
}
