//! Tensor-train compression from skeleton pivots, refined by oversampled
//! oblique projections.
//!
//! The pipeline is: an entry oracle ([`TensorOracle`]), a nested pivot search
//! ([`tt_aca`]), the plain skeleton train ([`skeleton_tt`]), and one of the
//! projection-enhanced rebuilds ([`tt_peid`]) that reuse those pivots.
//!
//! ```
//! use ttpeid::{tt_aca, tt_peid, AcaConfig, Hilbert, OversamplePlan, PeidAlgorithm, SampleSet};
//!
//! let x = Hilbert::new(4, 30).unwrap();
//! let pivots = tt_aca(&x, &AcaConfig { tolerance: 1e-6, ..Default::default() }).unwrap().pivots;
//! let plan = OversamplePlan::constant(4, 5, 7);
//! let tt = tt_peid(&x, &pivots, &plan, PeidAlgorithm::Seq2).unwrap().tt;
//! let err = SampleSet::draw(&x, 1000, 1).rel_err(&tt).unwrap().value;
//! assert!(err < 1e-4);
//! ```

pub mod error;
pub mod index;
pub mod linalg;
pub mod oracle;
pub mod sampling;
pub mod tt;
pub mod skeleton;
pub mod peid;
pub mod baselines;
pub mod benchgen;
pub mod eval;
pub mod golden;

pub use baselines::{tt_sketch, tt_sketch_par, SketchConfig};
pub use benchgen::{BenchSpec, Family, Hilbert, KernelKind, KernelTensor, Maxwellian};
pub use error::{PeidError, Result};
pub use eval::{
    run_sweep, sampled_rel_err, reduction_factor, Method, Oversampling, SampleSet, SweepConfig,
    SweepRow,
};
pub use golden::{verify_golden, GoldenRecord, GoldenReport};
pub use index::{IndexSet, LinearIndex, Shape};
pub use oracle::{CountingOracle, DenseTensor, FnOracle, ReversedOracle, TensorOracle};
pub use peid::{tt_peid, OversampleSets, PassKind, PeidAlgorithm, PeidResult};
pub use sampling::OversamplePlan;
pub use skeleton::{skeleton_tt, tt_aca, AcaConfig, PivotSets};
pub use tt::{Core, RoundTarget, TtTensor};
