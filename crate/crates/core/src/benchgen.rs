//! Benchmark tensors: Hilbert, Matérn-5/2, thin plate spline, and
//! Maxwellian distributions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PeidError, Result};
use crate::index::Shape;
use crate::oracle::TensorOracle;

/// `X(i) = 1 / (i_1 + .. + i_d + 1)` with 0-based indices.
#[derive(Clone, Debug)]
pub struct Hilbert {
    shape: Shape,
}

impl Hilbert {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d < 2 {
            return Err(PeidError::Config(format!("Hilbert tensor needs d >= 2, got {d}")));
        }
        Ok(Hilbert { shape: Shape::uniform(d, n)? })
    }
}

impl TensorOracle for Hilbert {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        1.0 / (idx.iter().sum::<usize>() as f64 + 1.0)
    }
}

/// Chebyshev roots `cos((2i + 1) π / (2n))`, `i = 0..n`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((2 * i + 1) as f64 * PI / (2 * n) as f64).cos()).collect()
}

/// Nodes `ζ` mapped by `(a0 - a1)/2 · ζ + (a0 + a1)/2`.
pub fn mapped_nodes(n: usize, interval: [f64; 2]) -> Vec<f64> {
    let [a0, a1] = interval;
    chebyshev_nodes(n).into_iter().map(|z| 0.5 * (a0 - a1) * z + 0.5 * (a0 + a1)).collect()
}

/// `K_{5/2}(z) = sqrt(π / 2z) e^{-z} (1 + 3/z + 3/z²)`.
pub fn bessel_k52(z: f64) -> f64 {
    (PI / (2.0 * z)).sqrt() * (-z).exp() * (1.0 + 3.0 / z + 3.0 / (z * z))
}

/// Matérn value `sqrt(5γ) · K_{5/2}(sqrt(5) γ)` at distance `γ`.
pub fn matern_kernel(gamma: f64) -> f64 {
    (5.0 * gamma).sqrt() * bessel_k52(5f64.sqrt() * gamma)
}

/// Thin plate spline `γ² log γ²`.
pub fn tps_kernel(gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    g2 * g2.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Matern,
    Tps,
}

/// Kernel of the distance between `x = (ξ_{i_1}, .., ξ_{i_{d/2}})` and
/// `y = (η_{j_1}, .., η_{j_{d/2}})`; the first `d/2` dims index `x`.
#[derive(Clone, Debug)]
pub struct KernelTensor {
    shape: Shape,
    kind: KernelKind,
    xi: Vec<f64>,
    eta: Vec<f64>,
}

pub const DEFAULT_A: [f64; 2] = [2.0, 3.0];
pub const DEFAULT_B: [f64; 2] = [0.0, 1.0];

impl KernelTensor {
    pub fn new(kind: KernelKind, d: usize, n: usize, a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        if d < 2 || !d.is_multiple_of(2) {
            return Err(PeidError::Config(format!("kernel tensors need even d >= 2, got {d}")));
        }
        let (lo_a, hi_a) = (a[0].min(a[1]), a[0].max(a[1]));
        let (lo_b, hi_b) = (b[0].min(b[1]), b[0].max(b[1]));
        if !(hi_a < lo_b || hi_b < lo_a) {
            return Err(PeidError::Config(format!(
                "kernel intervals {a:?} and {b:?} overlap"
            )));
        }
        Ok(KernelTensor {
            shape: Shape::uniform(d, n)?,
            kind,
            xi: mapped_nodes(n, a),
            eta: mapped_nodes(n, b),
        })
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    fn gamma(&self, idx: &[usize]) -> f64 {
        let h = idx.len() / 2;
        idx[..h]
            .iter()
            .zip(&idx[h..])
            .map(|(&i, &j)| (self.xi[i] - self.eta[j]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl TensorOracle for KernelTensor {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        let g = self.gamma(idx);
        match self.kind {
            KernelKind::Matern => matern_kernel(g),
            KernelKind::Tps => tps_kernel(g),
        }
    }
}

/// `n` endpoint-inclusive equispaced points on `[lo, hi]`.
pub fn equispaced(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

pub const SPACE_INTERVAL: [f64; 2] = [-0.5, 0.5];
pub const VELOCITY_INTERVAL: [f64; 2] = [-3.0, 3.0];
const DRIFT: f64 = 0.75;

pub fn density(w: f64) -> f64 {
    1.0 + 0.875 * (2.0 * PI * w).sin()
}

pub fn temperature(w: f64) -> f64 {
    0.5 + 0.4 * (2.0 * PI * w).sin()
}

/// Two-stream Maxwellian on an interleaved `(x, v_x, y, v_y[, z, v_z])` grid.
///
/// `f = Σ_w ρ(w)/(2 sqrt(2π T(w))) · [exp(-Σ_w b_w⁻) + exp(-Σ_w b_w⁺)]` with
/// `b_w^± = (v_w ± 0.75)² / (2 T(w))`.
#[derive(Clone, Debug)]
pub struct Maxwellian {
    shape: Shape,
    position: Vec<f64>,
    velocity: Vec<f64>,
    weight: Vec<f64>,
    inv_2t: Vec<f64>,
}

impl Maxwellian {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d != 4 && d != 6 {
            return Err(PeidError::Config(format!("Maxwellian tensors have d = 4 or 6, got {d}")));
        }
        if n < 2 {
            return Err(PeidError::Config(format!("Maxwellian grid needs n >= 2, got {n}")));
        }
        let position = equispaced(n, SPACE_INTERVAL[0], SPACE_INTERVAL[1]);
        let velocity = equispaced(n, VELOCITY_INTERVAL[0], VELOCITY_INTERVAL[1]);
        let weight = position
            .iter()
            .map(|&w| density(w) / (2.0 * (2.0 * PI * temperature(w)).sqrt()))
            .collect();
        let inv_2t = position.iter().map(|&w| 0.5 / temperature(w)).collect();
        Ok(Maxwellian { shape: Shape::uniform(d, n)?, position, velocity, weight, inv_2t })
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Direct evaluation at physical coordinates `(w, v_w)` pairs.
pub fn maxwellian_value(pairs: &[(f64, f64)]) -> f64 {
    let mut rho = 0.0;
    let (mut minus, mut plus) = (0.0, 0.0);
    for &(w, v) in pairs {
        let t = temperature(w);
        rho += density(w) / (2.0 * (2.0 * PI * t).sqrt());
        minus += (v - DRIFT).powi(2) / (2.0 * t);
        plus += (v + DRIFT).powi(2) / (2.0 * t);
    }
    rho * ((-minus).exp() + (-plus).exp())
}

impl TensorOracle for Maxwellian {
    fn shape(&self) -> &Shape {
        &self.shape
    }
    fn eval(&self, idx: &[usize]) -> f64 {
        let mut rho = 0.0;
        let (mut minus, mut plus) = (0.0, 0.0);
        for pair in idx.chunks_exact(2) {
            let (w, v) = (pair[0], self.velocity[pair[1]]);
            rho += self.weight[w];
            minus += (v - DRIFT).powi(2) * self.inv_2t[w];
            plus += (v + DRIFT).powi(2) * self.inv_2t[w];
        }
        rho * ((-minus).exp() + (-plus).exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Hilbert,
    Matern,
    Tps,
    Maxwellian,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Hilbert => "hilbert",
            Family::Matern => "matern",
            Family::Tps => "tps",
            Family::Maxwellian => "maxwellian",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = PeidError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "hilbert" => Family::Hilbert,
            "matern" => Family::Matern,
            "tps" => Family::Tps,
            "maxwellian" => Family::Maxwellian,
            _ => return Err(PeidError::Config(format!("unknown tensor family '{s}'"))),
        })
    }
}

/// A named benchmark tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub family: Family,
    pub d: usize,
    pub n: usize,
    /// Interval of the `x` nodes for kernel families.
    #[serde(default = "default_a")]
    pub a: [f64; 2],
    /// Interval of the `y` nodes for kernel families.
    #[serde(default = "default_b")]
    pub b: [f64; 2],
}

fn default_a() -> [f64; 2] {
    DEFAULT_A
}

fn default_b() -> [f64; 2] {
    DEFAULT_B
}

impl BenchSpec {
    pub fn new(family: Family, d: usize, n: usize) -> Self {
        BenchSpec { family, d, n, a: DEFAULT_A, b: DEFAULT_B }
    }

    /// Parses `family[:key=value,...]` with keys `a0`, `a1`, `b0`, `b1`.
    pub fn parse(s: &str, d: usize, n: usize) -> Result<Self> {
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = BenchSpec::new(name.parse()?, d, n);
        for kv in params.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| PeidError::Config(format!("parameter '{kv}' is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| PeidError::Config(format!("parameter '{kv}' has a non-numeric value")))?;
            match k.trim() {
                "a0" => spec.a[0] = v,
                "a1" => spec.a[1] = v,
                "b0" => spec.b[0] = v,
                "b1" => spec.b[1] = v,
                other => return Err(PeidError::Config(format!("unknown parameter '{other}'"))),
            }
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<Box<dyn TensorOracle + Send>> {
        Ok(match self.family {
            Family::Hilbert => Box::new(Hilbert::new(self.d, self.n)?),
            Family::Matern => {
                Box::new(KernelTensor::new(KernelKind::Matern, self.d, self.n, self.a, self.b)?)
            }
            Family::Tps => {
                Box::new(KernelTensor::new(KernelKind::Tps, self.d, self.n, self.a, self.b)?)
            }
            Family::Maxwellian => Box::new(Maxwellian::new(self.d, self.n)?),
        })
    }
}
