//! Dense statevector simulation of feature-map circuits.
//!
//! Qubit 0 is the least significant bit of the amplitude index. Gates are
//! applied in place with bit-masked strides; diagonal gates touch each
//! amplitude once. With fusion enabled, runs of single-qubit gates are
//! multiplied into one 2x2 per qubit and CNOT ladders become a single
//! permutation pass.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::featuremap::{build_feature_map, Circuit, CircuitConfig, CircuitError, Gate};

pub const DEFAULT_QUBIT_CAP: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{n} qubits exceeds the simulator cap of {cap}")]
    QubitCapExceeded { n: usize, cap: usize },
    #[error("statevector sizes differ: {0} vs {1} qubits")]
    SizeMismatch(usize, usize),
    #[error("batch needs {needed} bytes, budget is {limit}")]
    MemoryBudgetExceeded { needed: u64, limit: u64 },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Self { n_qubits, amps }
    }

    /// Wraps raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Option<Self> {
        if !amps.len().is_power_of_two() {
            return None;
        }
        let n_qubits = amps.len().trailing_zeros() as usize;
        Some(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }
}

/// `<a|b> = sum_k conj(a_k) b_k`.
pub fn inner_product(a: &Statevector, b: &Statevector) -> Result<Complex64, SimError> {
    if a.n_qubits != b.n_qubits {
        return Err(SimError::SizeMismatch(a.n_qubits, b.n_qubits));
    }
    Ok(a.amps
        .iter()
        .zip(&b.amps)
        .fold(ZERO, |acc, (x, y)| acc + x.conj() * y))
}

/// Half-angle trigonometry for one rotation angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfAngle {
    pub cos: f64,
    pub sin: f64,
    /// `e^{-i theta/2}`
    pub phase_neg: Complex64,
    /// `e^{+i theta/2}`
    pub phase_pos: Complex64,
}

impl HalfAngle {
    pub fn compute(theta: f64) -> Self {
        let (sin, cos) = (0.5 * theta).sin_cos();
        Self {
            cos,
            sin,
            phase_neg: Complex64::new(cos, -sin),
            phase_pos: Complex64::new(cos, sin),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Memo of half-angle values keyed on the exact bit pattern of the angle.
#[derive(Debug, Default)]
pub struct TrigCache {
    map: HashMap<u64, HalfAngle>,
    stats: CacheStats,
}

impl TrigCache {
    pub fn get(&mut self, theta: f64) -> HalfAngle {
        match self.map.get(&theta.to_bits()) {
            Some(v) => {
                self.stats.hits += 1;
                *v
            }
            None => {
                self.stats.misses += 1;
                let v = HalfAngle::compute(theta);
                self.map.insert(theta.to_bits(), v);
                v
            }
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub qubit_cap: usize,
    pub use_cache: bool,
    pub fuse: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            qubit_cap: DEFAULT_QUBIT_CAP,
            use_cache: true,
            fuse: true,
        }
    }
}

type Mat2 = [Complex64; 4];

const HADAMARD: Mat2 = [
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, 0.0),
];

/// `a * b` (apply `b` first).
fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Dense(usize, Mat2),
    Diag(usize, Complex64, Complex64),
    Cnot(usize, usize),
    /// CNOT(q, q+1) for q in `start..start+len`, ascending or descending.
    Ladder {
        start: usize,
        len: usize,
        descending: bool,
    },
}

/// Simulator with its own trig cache and scratch buffer; one per worker.
#[derive(Debug, Default)]
pub struct Simulator {
    opts: SimOptions,
    cache: TrigCache,
    scratch: Vec<Complex64>,
}

impl Simulator {
    pub fn new(opts: SimOptions) -> Self {
        Self {
            opts,
            cache: TrigCache::default(),
            scratch: Vec::new(),
        }
    }

    pub fn options(&self) -> &SimOptions {
        &self.opts
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    fn half_angle(&mut self, theta: f64) -> HalfAngle {
        if self.opts.use_cache {
            self.cache.get(theta)
        } else {
            HalfAngle::compute(theta)
        }
    }

    fn gate_matrix(&mut self, g: &Gate) -> Option<Mat2> {
        match *g {
            Gate::H { .. } => Some(HADAMARD),
            Gate::Rz { theta, .. } => {
                let t = self.half_angle(theta);
                Some([t.phase_neg, ZERO, ZERO, t.phase_pos])
            }
            Gate::Ry { theta, .. } => {
                let t = self.half_angle(theta);
                let (c, s) = (Complex64::new(t.cos, 0.0), Complex64::new(t.sin, 0.0));
                Some([c, -s, s, c])
            }
            Gate::Cnot { .. } => None,
        }
    }

    fn single_op(q: usize, m: Mat2) -> Op {
        if m[1] == ZERO && m[2] == ZERO {
            Op::Diag(q, m[0], m[3])
        } else {
            Op::Dense(q, m)
        }
    }

    fn compile(&mut self, c: &Circuit) -> Vec<Op> {
        let n = c.n_qubits();
        let mut ops = Vec::with_capacity(c.len());
        if !self.opts.fuse {
            for g in c.gates() {
                match (*g, self.gate_matrix(g)) {
                    (Gate::Cnot { control, target }, _) => ops.push(Op::Cnot(control, target)),
                    (Gate::H { qubit }, Some(m))
                    | (Gate::Rz { qubit, .. }, Some(m))
                    | (Gate::Ry { qubit, .. }, Some(m)) => ops.push(Self::single_op(qubit, m)),
                    _ => unreachable!(),
                }
            }
            return ops;
        }

        let mut pending: Vec<Option<Mat2>> = vec![None; n];
        let mut cnots: Vec<(usize, usize)> = Vec::new();
        let flush_cnots = |cnots: &mut Vec<(usize, usize)>, ops: &mut Vec<Op>| {
            emit_cnot_run(cnots, ops);
            cnots.clear();
        };
        for g in c.gates() {
            match *g {
                Gate::Cnot { control, target } => {
                    // Pending single-qubit work commutes across qubits, so it can all
                    // be emitted before the first CNOT of a run.
                    for (q, p) in pending.iter_mut().enumerate() {
                        if let Some(m) = p.take() {
                            ops.push(Self::single_op(q, m));
                        }
                    }
                    cnots.push((control, target));
                }
                Gate::H { qubit } | Gate::Rz { qubit, .. } | Gate::Ry { qubit, .. } => {
                    if !cnots.is_empty() {
                        flush_cnots(&mut cnots, &mut ops);
                    }
                    let m = self.gate_matrix(g).expect("single-qubit gate");
                    pending[qubit] = Some(match pending[qubit] {
                        Some(prev) => mat_mul(&m, &prev),
                        None => m,
                    });
                }
            }
        }
        flush_cnots(&mut cnots, &mut ops);
        for (q, p) in pending.into_iter().enumerate() {
            if let Some(m) = p {
                ops.push(Self::single_op(q, m));
            }
        }
        ops
    }

    fn check_cap(&self, n: usize) -> Result<(), SimError> {
        if n > self.opts.qubit_cap {
            return Err(SimError::QubitCapExceeded {
                n,
                cap: self.opts.qubit_cap,
            });
        }
        Ok(())
    }

    /// `U|0...0>` for the circuit `U`.
    pub fn simulate(&mut self, c: &Circuit) -> Result<Statevector, SimError> {
        self.check_cap(c.n_qubits())?;
        let mut state = Statevector::zero(c.n_qubits());
        self.apply(&mut state, c)?;
        Ok(state)
    }

    /// Applies `c` to `state` in place.
    pub fn apply(&mut self, state: &mut Statevector, c: &Circuit) -> Result<(), SimError> {
        self.check_cap(c.n_qubits())?;
        if state.n_qubits != c.n_qubits() {
            return Err(SimError::SizeMismatch(state.n_qubits, c.n_qubits()));
        }
        let ops = self.compile(c);
        for op in &ops {
            match *op {
                Op::Dense(q, ref m) => apply_dense(&mut state.amps, q, m),
                Op::Diag(q, d0, d1) => apply_diag(&mut state.amps, q, d0, d1),
                Op::Cnot(ctl, tgt) => apply_cnot(&mut state.amps, ctl, tgt),
                Op::Ladder {
                    start,
                    len,
                    descending,
                } => {
                    self.scratch.resize(state.amps.len(), ZERO);
                    apply_ladder(&state.amps, &mut self.scratch, start, len, descending);
                    std::mem::swap(&mut state.amps, &mut self.scratch);
                }
            }
        }
        Ok(())
    }
}

fn emit_cnot_run(cnots: &[(usize, usize)], ops: &mut Vec<Op>) {
    let mut i = 0;
    while i < cnots.len() {
        let (c0, t0) = cnots[i];
        let step: isize = if t0 == c0 + 1 {
            // Length of an ascending run CNOT(c0,c0+1), CNOT(c0+1,c0+2), ...
            let mut j = i + 1;
            while j < cnots.len() && cnots[j] == (cnots[j - 1].0 + 1, cnots[j - 1].1 + 1) {
                j += 1;
            }
            let asc = j - i;
            let mut k = i + 1;
            while k < cnots.len()
                && cnots[k - 1].0 >= 1
                && cnots[k] == (cnots[k - 1].0 - 1, cnots[k - 1].1 - 1)
            {
                k += 1;
            }
            let desc = k - i;
            if asc >= desc {
                asc as isize
            } else {
                -(desc as isize)
            }
        } else {
            0
        };
        match step {
            s if s > 1 => {
                ops.push(Op::Ladder {
                    start: c0,
                    len: s as usize,
                    descending: false,
                });
                i += s as usize;
            }
            s if s < -1 => {
                let len = (-s) as usize;
                ops.push(Op::Ladder {
                    start: c0 + 1 - len,
                    len,
                    descending: true,
                });
                i += len;
            }
            _ => {
                ops.push(Op::Cnot(c0, t0));
                i += 1;
            }
        }
    }
}

fn apply_dense(amps: &mut [Complex64], q: usize, m: &Mat2) {
    let stride = 1usize << q;
    for chunk in amps.chunks_exact_mut(2 * stride) {
        let (lo, hi) = chunk.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            let (x, y) = (*a0, *a1);
            *a0 = m[0] * x + m[1] * y;
            *a1 = m[2] * x + m[3] * y;
        }
    }
}

fn apply_diag(amps: &mut [Complex64], q: usize, d0: Complex64, d1: Complex64) {
    let stride = 1usize << q;
    for chunk in amps.chunks_exact_mut(2 * stride) {
        let (lo, hi) = chunk.split_at_mut(stride);
        lo.iter_mut().for_each(|a| *a *= d0);
        hi.iter_mut().for_each(|a| *a *= d1);
    }
}

fn apply_cnot(amps: &mut [Complex64], control: usize, target: usize) {
    let (cm, tm) = (1usize << control, 1usize << target);
    for i in 0..amps.len() {
        if i & cm != 0 && i & tm == 0 {
            amps.swap(i, i | tm);
        }
    }
}

/// Scatter for a CNOT ladder over qubits `start..=start+len`.
///
/// Ascending ladders map the segment bits to their prefix XOR; descending
/// ladders XOR each bit with its lower neighbour's original value.
fn apply_ladder(src: &[Complex64], dst: &mut [Complex64], start: usize, len: usize, descending: bool) {
    let width = len + 1;
    let seg_mask = (1usize << width) - 1;
    let clear = !(seg_mask << start);
    for (i, &a) in src.iter().enumerate() {
        let seg = (i >> start) & seg_mask;
        let mapped = if descending {
            seg ^ (seg << 1)
        } else {
            let mut p = seg;
            let mut shift = 1;
            while shift < width {
                p ^= p << shift;
                shift <<= 1;
            }
            p
        } & seg_mask;
        dst[(i & clear) | (mapped << start)] = a;
    }
}

/// Storage precision for batched amplitudes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn bytes_per_amplitude(self) -> u64 {
        match self {
            Precision::F64 => 16,
            Precision::F32 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Planes {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

/// Packed statevectors, one row per sample laid out as `[re(2^n) | im(2^n)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBatch {
    pub n_qubits: usize,
    pub rows: usize,
    pub planes: Planes,
}

impl StateBatch {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn row_len(&self) -> usize {
        2 * self.dim()
    }

    /// Row `i` as a statevector (widened to `f64` in `f32` mode).
    pub fn state(&self, i: usize) -> Statevector {
        let d = self.dim();
        let amps = match &self.planes {
            Planes::F64(v) => {
                let row = &v[i * 2 * d..(i + 1) * 2 * d];
                (0..d).map(|k| Complex64::new(row[k], row[d + k])).collect()
            }
            Planes::F32(v) => {
                let row = &v[i * 2 * d..(i + 1) * 2 * d];
                (0..d)
                    .map(|k| Complex64::new(row[k] as f64, row[d + k] as f64))
                    .collect()
            }
        };
        Statevector {
            n_qubits: self.n_qubits,
            amps,
        }
    }
}

/// Bytes needed to hold `rows` packed states.
pub fn batch_bytes(rows: usize, n_qubits: usize, precision: Precision) -> u64 {
    rows as u64 * (1u64 << n_qubits) * precision.bytes_per_amplitude()
}

/// Simulates the feature map of every row of `x`. Row `i` of the result
/// equals `simulate(build_feature_map(x[i]))`, independent of thread count.
pub fn batch_states(
    x: &FeatureMatrix,
    cfg: &CircuitConfig,
    opts: SimOptions,
    precision: Precision,
    memory_limit: u64,
) -> Result<StateBatch, SimError> {
    let n = cfg.n_qubits;
    if n > opts.qubit_cap {
        return Err(SimError::QubitCapExceeded {
            n,
            cap: opts.qubit_cap,
        });
    }
    let needed = batch_bytes(x.rows(), n, precision);
    if needed > memory_limit {
        return Err(SimError::MemoryBudgetExceeded {
            needed,
            limit: memory_limit,
        });
    }
    let d = 1usize << n;
    let fill = |sim: &mut Simulator, i: usize| -> Result<Statevector, SimError> {
        let circuit = build_feature_map(&x.row_f64(i), cfg)?;
        sim.simulate(&circuit)
    };
    let planes = match precision {
        Precision::F64 => {
            let mut buf = vec![0.0f64; x.rows() * 2 * d];
            buf.par_chunks_mut(2 * d.max(1))
                .enumerate()
                .try_for_each_init(
                    || Simulator::new(opts),
                    |sim, (i, row)| {
                        let s = fill(sim, i)?;
                        let (re, im) = row.split_at_mut(d);
                        for (k, a) in s.amps.iter().enumerate() {
                            re[k] = a.re;
                            im[k] = a.im;
                        }
                        Ok::<_, SimError>(())
                    },
                )?;
            Planes::F64(buf)
        }
        Precision::F32 => {
            let mut buf = vec![0.0f32; x.rows() * 2 * d];
            buf.par_chunks_mut(2 * d.max(1))
                .enumerate()
                .try_for_each_init(
                    || Simulator::new(opts),
                    |sim, (i, row)| {
                        let s = fill(sim, i)?;
                        let (re, im) = row.split_at_mut(d);
                        for (k, a) in s.amps.iter().enumerate() {
                            re[k] = a.re as f32;
                            im[k] = a.im as f32;
                        }
                        Ok::<_, SimError>(())
                    },
                )?;
            Planes::F32(buf)
        }
    };
    Ok(StateBatch {
        n_qubits: n,
        rows: x.rows(),
        planes,
    })
}
