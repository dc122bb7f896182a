//! End-to-end kernel analysis (affinity → detect → legalize → coverage),
//! the kernel report document, and parameter sweeps over a trace corpus.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityError, AffinityMatrix};
use crate::detect::{detect, DetectError, DetectParams, Growth, KernelCandidate};
use crate::legalize::{coverage, coverage_contributions, legalize, Coverage, Kernel, Legalized};
use crate::scalar::Score;
use crate::sim::Recommended;
use crate::trace::{BlockId, Trace};

pub const DEFAULT_RADIUS: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("no traces to sweep")]
    NoTraces,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisConfig<S: Score> {
    pub radius: usize,
    pub detect: DetectParams<S>,
}

impl<S: Score> Default for AnalysisConfig<S> {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            detect: DetectParams::default(),
        }
    }
}

impl<S: Score> AnalysisConfig<S> {
    pub fn new(radius: usize, threshold: S, hot_count: u64) -> Self {
        Self {
            radius,
            detect: DetectParams {
                threshold,
                hot_count,
                growth: Growth::default(),
            },
        }
    }
}

impl<S: Score> From<Recommended> for AnalysisConfig<S> {
    fn from(r: Recommended) -> Self {
        Self::new(r.radius, S::lit(r.threshold), r.hot_count)
    }
}

#[derive(Clone, Debug)]
pub struct Analysis<S: Score> {
    pub config: AnalysisConfig<S>,
    pub candidates: Vec<KernelCandidate<S>>,
    pub legalized: Legalized,
    pub coverage: Coverage,
}

impl<S: Score> Analysis<S> {
    pub fn kernels(&self) -> &[Kernel] {
        &self.legalized.kernels
    }
}

pub fn analyze<S: Score>(trace: &Trace, config: &AnalysisConfig<S>) -> Result<Analysis<S>, AnalysisError> {
    config.detect.validate()?;
    let matrix = AffinityMatrix::from_trace(trace, config.radius)?;
    analyze_matrix(trace, &matrix, config)
}

/// Analysis with a precomputed matrix (must match `config.radius`).
pub fn analyze_matrix<S: Score>(
    trace: &Trace,
    matrix: &AffinityMatrix<S>,
    config: &AnalysisConfig<S>,
) -> Result<Analysis<S>, AnalysisError> {
    debug_assert_eq!(matrix.radius(), config.radius);
    let candidates = detect(matrix, &config.detect)?;
    let legalized = legalize(trace, &candidates);
    let coverage = coverage(trace, &legalized.kernels);
    Ok(Analysis {
        config: *config,
        candidates,
        legalized,
        coverage,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub seed: BlockId,
    pub blocks: Vec<BlockId>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    #[serde(flatten)]
    pub kernel: Kernel,
    /// Share of block entries that fall in this kernel.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub covered: u64,
    pub total: u64,
    pub ratio: f64,
}

impl From<Coverage> for CoverageEntry {
    fn from(c: Coverage) -> Self {
        Self {
            covered: c.covered,
            total: c.total,
            ratio: c.as_f64(),
        }
    }
}

/// The kernels document written by `analyze` and read by `pipeline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub radius: usize,
    pub threshold: f64,
    pub hot_count: u64,
    pub growth: Growth,
    pub block_count: u32,
    pub coverage: CoverageEntry,
    pub candidates: Vec<CandidateEntry>,
    pub kernels: Vec<KernelEntry>,
    #[serde(default)]
    pub rejected: Vec<String>,
}

impl KernelReport {
    pub fn new<S: Score>(trace: &Trace, analysis: &Analysis<S>) -> Self {
        let shares = coverage_contributions(trace, analysis.kernels());
        Self {
            radius: analysis.config.radius,
            threshold: analysis.config.detect.threshold.to_f64_lossy(),
            hot_count: analysis.config.detect.hot_count,
            growth: analysis.config.detect.growth,
            block_count: trace.block_count(),
            coverage: analysis.coverage.into(),
            candidates: analysis
                .candidates
                .iter()
                .map(|c| CandidateEntry {
                    seed: c.seed,
                    blocks: c.blocks.clone(),
                    score: c.score.to_f64_lossy(),
                })
                .collect(),
            kernels: analysis
                .kernels()
                .iter()
                .zip(shares)
                .map(|(k, share)| KernelEntry {
                    kernel: k.clone(),
                    coverage: share.as_f64(),
                })
                .collect(),
            rejected: analysis.legalized.rejected.iter().map(|r| r.to_string()).collect(),
        }
    }

    pub fn kernels(&self) -> Vec<Kernel> {
        self.kernels.iter().map(|e| e.kernel.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One swept parameter and its grid.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Threshold(Vec<f64>),
    Radius(Vec<usize>),
    Hot(Vec<u64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Threshold(_) => "threshold",
            SweepAxis::Radius(_) => "radius",
            SweepAxis::Hot(_) => "hot",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Threshold(v) => v.len(),
            SweepAxis::Radius(v) => v.len(),
            SweepAxis::Hot(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub mean_kernels: f64,
    pub mean_coverage: f64,
}

/// Runs every trace at every grid value, overriding one parameter of that
/// trace's base configuration, and averages kernel count and coverage.
pub fn sweep<S: Score>(
    corpus: &[(&Trace, AnalysisConfig<S>)],
    axis: &SweepAxis,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if axis.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    if corpus.is_empty() {
        return Err(AnalysisError::NoTraces);
    }
    let n = corpus.len() as f64;
    let mut sums = vec![(0.0f64, 0.0f64); axis.len()];
    for (trace, base) in corpus {
        let mut add = |i: usize, a: &Analysis<S>| {
            sums[i].0 += a.kernels().len() as f64;
            sums[i].1 += a.coverage.as_f64();
        };
        match axis {
            SweepAxis::Radius(radii) => {
                for (i, &r) in radii.iter().enumerate() {
                    let cfg = AnalysisConfig { radius: r, ..*base };
                    add(i, &analyze(trace, &cfg)?);
                }
            }
            SweepAxis::Threshold(values) => {
                let matrix = AffinityMatrix::from_trace(trace, base.radius)?;
                for (i, &t) in values.iter().enumerate() {
                    let mut cfg = *base;
                    cfg.detect.threshold = S::lit(t);
                    add(i, &analyze_matrix(trace, &matrix, &cfg)?);
                }
            }
            SweepAxis::Hot(values) => {
                let matrix = AffinityMatrix::from_trace(trace, base.radius)?;
                for (i, &h) in values.iter().enumerate() {
                    let mut cfg = *base;
                    cfg.detect.hot_count = h;
                    add(i, &analyze_matrix(trace, &matrix, &cfg)?);
                }
            }
        }
    }
    let values: Vec<f64> = match axis {
        SweepAxis::Threshold(v) => v.clone(),
        SweepAxis::Radius(v) => v.iter().map(|&r| r as f64).collect(),
        SweepAxis::Hot(v) => v.iter().map(|&h| h as f64).collect(),
    };
    Ok(values
        .into_iter()
        .zip(sums)
        .map(|(value, (k, c))| SweepRow {
            axis: axis.name().into(),
            value,
            mean_kernels: k / n,
            mean_coverage: c / n,
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,mean_kernels,mean_coverage\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.axis, r.value, r.mean_kernels, r.mean_coverage);
    }
    out
}
