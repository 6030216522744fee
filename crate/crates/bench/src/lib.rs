//! Fixtures shared by the criterion benches.

use ttpeid::{tt_aca, AcaConfig, Hilbert, PivotSets};

/// Hilbert tensor and its ACA pivots at relative tolerance `tol`.
pub fn hilbert_with_pivots(d: usize, n: usize, tol: f64) -> (Hilbert, PivotSets) {
    let h = Hilbert::new(d, n).expect("valid Hilbert size");
    let cfg = AcaConfig { tolerance: tol, ..AcaConfig::default() };
    let pivots = tt_aca(&h, &cfg).expect("pivot search succeeds").pivots;
    (h, pivots)
}
