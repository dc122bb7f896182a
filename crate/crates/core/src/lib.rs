//! Dynamic block-trace pipeline: simulate programs, encode their traces,
//! find kernels by windowed temporal affinity, repair them against the trace
//! and extract the producer/consumer graph between kernel instances.
//!
//! Scores are generic over [`Score`] (`f32` or `f64`); the `*64`/`*32`
//! aliases below fix the scalar for callers that do not care.

pub mod affinity;
pub mod analysis;
pub mod codec;
pub mod detect;
pub mod legalize;
pub mod memdep;
pub mod scalar;
pub mod sim;
pub mod trace;

pub use affinity::{AffinityError, AffinityMatrix, AffinityState, Footprint};
pub use analysis::{analyze, sweep, Analysis, AnalysisConfig, KernelReport, SweepAxis, SweepRow};
pub use codec::{decode_trace, encode_trace, read_trace, write_trace, CodecConfig, CodecError, Compression};
pub use detect::{detect, set_score, DetectError, DetectParams, Growth, KernelCandidate};
pub use legalize::{coverage, hierarchy, legalize, Coverage, Kernel, Legalized};
pub use memdep::{
    build_pipeline, extract_dependencies, segment_instances, Actor, Dependency, Dependencies,
    KernelInstance, MemdepError, PipelineGraph,
};
pub use scalar::Score;
pub use sim::{run, CfgProgram, RunOptions, SimError};
pub use trace::{Address, BlockId, Trace, TraceError, TraceEvent};

pub type AffinityMatrix64 = AffinityMatrix<f64>;
pub type AffinityMatrix32 = AffinityMatrix<f32>;
pub type DetectParams64 = DetectParams<f64>;
pub type DetectParams32 = DetectParams<f32>;
pub type KernelCandidate64 = KernelCandidate<f64>;
pub type KernelCandidate32 = KernelCandidate<f32>;
pub type AnalysisConfig64 = AnalysisConfig<f64>;
pub type AnalysisConfig32 = AnalysisConfig<f32>;
pub type Analysis64 = Analysis<f64>;
pub type Analysis32 = Analysis<f32>;
