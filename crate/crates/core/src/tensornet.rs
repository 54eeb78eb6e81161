//! Tensor-network evaluation of compute-uncompute amplitudes.
//!
//! A pair of circuits `(c, bra)` becomes a network computing
//! `<0...0| bra^dagger c |0...0>`: one `|0>` cap per qubit, one tensor per gate,
//! one `<0|` cap per qubit. Every index has dimension 2 and joins exactly two
//! tensors (or one tensor and the output list). Contraction runs pairwise
//! along a [`ContractionPath`]; the value does not depend on the path, the
//! cost does.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featuremap::{adjoint, Circuit, Gate};

/// Exhaustive search is limited to networks this small.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum TnError {
    #[error("circuits act on {0} and {1} qubits")]
    QubitCountMismatch(usize, usize),
    #[error("exhaustive search supports at most {EXHAUSTIVE_LIMIT} tensors, network has {0}")]
    TooLargeForExhaustive(usize),
    #[error("invalid contraction path: {0}")]
    PathInvalid(String),
    #[error("network has {0} open indices; expected a scalar")]
    NotScalar(usize),
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Dense tensor with bond dimension 2 on every index. Element
/// `sum_k v_k 2^k` holds the entry where `indices[k]` takes value `v_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetTensor {
    pub indices: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl NetTensor {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorNetwork {
    pub tensors: Vec<NetTensor>,
    /// Open indices, in output order. Empty for a scalar amplitude.
    pub output: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkOptions {
    /// Merge consecutive diagonal single-qubit gates on a wire into one tensor.
    pub fuse_diagonals: bool,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            fuse_diagonals: true,
        }
    }
}

fn single_qubit_matrix(g: &Gate) -> Option<[Complex64; 4]> {
    match *g {
        Gate::H { .. } => {
            let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            Some([h, h, h, -h])
        }
        Gate::Rz { theta, .. } => {
            let (s, c) = (0.5 * theta).sin_cos();
            Some([Complex64::new(c, -s), ZERO, ZERO, Complex64::new(c, s)])
        }
        Gate::Ry { theta, .. } => {
            let (s, c) = (0.5 * theta).sin_cos();
            let (c, s) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
            Some([c, -s, s, c])
        }
        Gate::Cnot { .. } => None,
    }
}

/// Builds the network for `<0...0| bra^dagger c |0...0>`.
pub fn circuit_to_network(
    c: &Circuit,
    bra: &Circuit,
    opts: NetworkOptions,
) -> Result<TensorNetwork, TnError> {
    let n = c.n_qubits();
    if bra.n_qubits() != n {
        return Err(TnError::QubitCountMismatch(n, bra.n_qubits()));
    }
    let uncompute = adjoint(bra);
    let mut next_label = 0usize;
    let mut fresh = || {
        next_label += 1;
        next_label - 1
    };
    let mut tensors = Vec::new();
    let mut wire: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n {
        let l = fresh();
        wire.push(l);
        tensors.push(NetTensor {
            indices: vec![l],
            data: vec![ONE, ZERO],
        });
    }
    // Position in `tensors` of the last gate on each wire when it is a fusable diagonal.
    let mut open_diag: Vec<Option<usize>> = vec![None; n];

    for g in c.gates().iter().chain(uncompute.gates()) {
        match *g {
            Gate::Cnot { control, target } => {
                let (oc, ot) = (fresh(), fresh());
                let mut data = vec![ZERO; 16];
                for ic in 0..2 {
                    for it in 0..2 {
                        data[ic + 2 * (it ^ ic) + 4 * ic + 8 * it] = ONE;
                    }
                }
                tensors.push(NetTensor {
                    indices: vec![oc, ot, wire[control], wire[target]],
                    data,
                });
                wire[control] = oc;
                wire[target] = ot;
                open_diag[control] = None;
                open_diag[target] = None;
            }
            Gate::H { qubit } | Gate::Rz { qubit, .. } | Gate::Ry { qubit, .. } => {
                let m = single_qubit_matrix(g).expect("single-qubit gate");
                let diagonal = matches!(g, Gate::Rz { .. });
                if opts.fuse_diagonals && diagonal {
                    if let Some(pos) = open_diag[qubit] {
                        let t = &mut tensors[pos];
                        t.data[0] *= m[0];
                        t.data[3] *= m[3];
                        continue;
                    }
                }
                let out = fresh();
                tensors.push(NetTensor {
                    indices: vec![out, wire[qubit]],
                    data: vec![m[0], m[2], m[1], m[3]],
                });
                wire[qubit] = out;
                open_diag[qubit] = (opts.fuse_diagonals && diagonal).then_some(tensors.len() - 1);
            }
        }
    }
    for &l in &wire {
        tensors.push(NetTensor {
            indices: vec![l],
            data: vec![ONE, ZERO],
        });
    }
    Ok(TensorNetwork {
        tensors,
        output: Vec::new(),
    })
}

impl TensorNetwork {
    /// Checks that every index joins exactly two tensors or one tensor and the output.
    pub fn validate(&self) -> Result<(), TnError> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for t in &self.tensors {
            if t.data.len() != 1 << t.rank() {
                return Err(TnError::PathInvalid(format!(
                    "tensor with rank {} holds {} values",
                    t.rank(),
                    t.data.len()
                )));
            }
            for &l in &t.indices {
                *counts.entry(l).or_default() += 1;
            }
        }
        for &l in &self.output {
            *counts.entry(l).or_default() += 1;
        }
        match counts.iter().find(|(_, &c)| c != 2) {
            Some((l, c)) => Err(TnError::PathInvalid(format!("index {l} appears {c} times"))),
            None => Ok(()),
        }
    }

    /// `einsum`-style subscripts plus the (all-2) operand shapes.
    pub fn to_einsum(&self) -> String {
        let mut symbols: HashMap<usize, char> = HashMap::new();
        let mut symbol = |l: usize| -> char {
            let next = symbols.len();
            *symbols.entry(l).or_insert_with(|| einsum_symbol(next))
        };
        let mut terms = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            terms.push(t.indices.iter().map(|&l| symbol(l)).collect::<String>());
        }
        let out: String = self.output.iter().map(|&l| symbol(l)).collect();
        let mut s = format!("{}->{}\n", terms.join(","), out);
        let shapes: Vec<String> = self
            .tensors
            .iter()
            .map(|t| format!("({})", vec!["2"; t.rank()].join(",")))
            .collect();
        let _ = write!(s, "{}", shapes.join(","));
        s
    }
}

fn einsum_symbol(i: usize) -> char {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    if i < LETTERS.len() {
        LETTERS[i] as char
    } else {
        char::from_u32(i as u32 + 140).unwrap_or('?')
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathStrategy {
    Sequential,
    #[default]
    Greedy,
    Exhaustive,
}

/// Pairwise merge order. Tensors are numbered `0..n`; the result of merge `k`
/// receives id `n + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionPath {
    pub merges: Vec<(usize, usize)>,
    /// Sum over merges of `2^|union of indices|` multiply-adds.
    pub flops: f64,
    /// Largest intermediate, in elements.
    pub peak_size: usize,
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().filter(|l| !b.contains(l)).copied().collect();
    out.extend(b.iter().filter(|l| !a.contains(l)));
    out
}

fn union_len(a: &[usize], b: &[usize]) -> usize {
    a.len() + b.iter().filter(|l| !a.contains(l)).count()
}

/// Replays a merge list over index sets, computing its cost.
fn cost_of(net: &TensorNetwork, merges: &[(usize, usize)]) -> Result<ContractionPath, TnError> {
    let n = net.tensors.len();
    let expected = n.saturating_sub(1);
    if merges.len() != expected {
        return Err(TnError::PathInvalid(format!(
            "{} merges for {} tensors",
            merges.len(),
            n
        )));
    }
    let mut sets: Vec<Option<Vec<usize>>> =
        net.tensors.iter().map(|t| Some(t.indices.clone())).collect();
    let mut flops = 0.0;
    let mut peak = net.tensors.iter().map(|t| t.data.len()).max().unwrap_or(1);
    for &(a, b) in merges {
        if a == b {
            return Err(TnError::PathInvalid(format!("tensor {a} merged with itself")));
        }
        let take = |sets: &mut Vec<Option<Vec<usize>>>, id: usize| {
            sets.get_mut(id)
                .and_then(Option::take)
                .ok_or_else(|| TnError::PathInvalid(format!("tensor {id} unavailable")))
        };
        let la = take(&mut sets, a)?;
        let lb = take(&mut sets, b)?;
        flops += (1u128 << union_len(&la, &lb)) as f64;
        let out = symmetric_difference(&la, &lb);
        peak = peak.max(1 << out.len());
        sets.push(Some(out));
    }
    Ok(ContractionPath {
        merges: merges.to_vec(),
        flops,
        peak_size: peak,
    })
}

pub fn find_path(net: &TensorNetwork, strategy: PathStrategy) -> Result<ContractionPath, TnError> {
    let n = net.tensors.len();
    let merges = match strategy {
        PathStrategy::Sequential => sequential_merges(n),
        PathStrategy::Greedy => greedy_merges(net),
        PathStrategy::Exhaustive => exhaustive_merges(net)?,
    };
    cost_of(net, &merges)
}

fn sequential_merges(n: usize) -> Vec<(usize, usize)> {
    (1..n)
        .map(|k| (if k == 1 { 0 } else { n + k - 2 }, k))
        .collect()
}

/// Repeatedly merges the connected pair with the smallest result, breaking
/// ties on fewer flops, then on lower ids.
fn greedy_merges(net: &TensorNetwork) -> Vec<(usize, usize)> {
    let n = net.tensors.len();
    let mut sets: Vec<Option<Vec<usize>>> =
        net.tensors.iter().map(|t| Some(t.indices.clone())).collect();
    let mut holders: HashMap<usize, Vec<usize>> = HashMap::new();
    for (id, t) in net.tensors.iter().enumerate() {
        for &l in &t.indices {
            holders.entry(l).or_default().push(id);
        }
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while merges.len() + 1 < n {
        let mut best: Option<((usize, usize, usize, usize), (usize, usize))> = None;
        for (&_, ids) in holders.iter() {
            let live: Vec<usize> = ids.iter().copied().filter(|&i| sets[i].is_some()).collect();
            for x in 0..live.len() {
                for y in x + 1..live.len() {
                    let (a, b) = (live[x].min(live[y]), live[x].max(live[y]));
                    let (la, lb) = (sets[a].as_ref().unwrap(), sets[b].as_ref().unwrap());
                    let size = symmetric_difference(la, lb).len();
                    let key = (size, union_len(la, lb), a, b);
                    if best.map_or(true, |(k, _)| key < k) {
                        best = Some((key, (a, b)));
                    }
                }
            }
        }
        let (a, b) = match best {
            Some((_, pair)) => pair,
            None => {
                // Disconnected components: outer product of the two lowest live ids.
                let mut live = (0..sets.len()).filter(|&i| sets[i].is_some());
                (live.next().unwrap(), live.next().unwrap())
            }
        };
        let la = sets[a].take().unwrap();
        let lb = sets[b].take().unwrap();
        let out = symmetric_difference(&la, &lb);
        let id = sets.len();
        for &l in &out {
            holders.entry(l).or_default().push(id);
        }
        for l in la.iter().chain(&lb) {
            if let Some(h) = holders.get_mut(l) {
                h.retain(|&i| i != a && i != b);
                if h.is_empty() {
                    holders.remove(l);
                }
            }
        }
        sets.push(Some(out));
        merges.push((a, b));
    }
    merges
}

/// Flop-optimal merge tree by dynamic programming over tensor subsets.
fn exhaustive_merges(net: &TensorNetwork) -> Result<Vec<(usize, usize)>, TnError> {
    let n = net.tensors.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(TnError::TooLargeForExhaustive(n));
    }
    if n <= 1 {
        return Ok(Vec::new());
    }
    let mut compact: HashMap<usize, usize> = HashMap::new();
    for t in &net.tensors {
        for &l in &t.indices {
            let next = compact.len();
            compact.entry(l).or_insert(next);
        }
    }
    if compact.len() > 128 {
        return Err(TnError::TooLargeForExhaustive(n));
    }
    let full = (1usize << n) - 1;
    // Open indices of a subset: XOR of member index sets (shared indices cancel).
    let mut open = vec![0u128; full + 1];
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        let bits = net.tensors[low]
            .indices
            .iter()
            .fold(0u128, |acc, l| acc | 1u128 << compact[l]);
        open[s] = open[s & (s - 1)] ^ bits;
    }
    let mut cost = vec![f64::INFINITY; full + 1];
    let mut split = vec![0usize; full + 1];
    for i in 0..n {
        cost[1 << i] = 0.0;
    }
    for s in 1..=full {
        if s.count_ones() < 2 {
            continue;
        }
        let low = s & s.wrapping_neg();
        // Enumerate proper subsets containing the lowest member to visit each split once.
        let mut a = (s - 1) & s;
        while a > 0 {
            if a & low != 0 {
                let b = s ^ a;
                let merge = (1u128 << (open[a] | open[b]).count_ones()) as f64;
                let c = cost[a] + cost[b] + merge;
                if c < cost[s] {
                    cost[s] = c;
                    split[s] = a;
                }
            }
            a = (a - 1) & s;
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    fn emit(s: usize, split: &[usize], n: usize, merges: &mut Vec<(usize, usize)>) -> usize {
        if s.count_ones() == 1 {
            return s.trailing_zeros() as usize;
        }
        let a = split[s];
        let ia = emit(a, split, n, merges);
        let ib = emit(s ^ a, split, n, merges);
        merges.push((ia, ib));
        n + merges.len() - 1
    }
    emit(full, &split, n, &mut merges);
    Ok(merges)
}

/// Contracts two tensors over their shared indices.
fn merge_pair(a: &NetTensor, b: &NetTensor) -> NetTensor {
    let shared: Vec<usize> = a.indices.iter().copied().filter(|l| b.indices.contains(l)).collect();
    let out = symmetric_difference(&a.indices, &b.indices);
    // For each operand, offsets contributed by each output bit and each summed bit.
    let offsets = |t: &NetTensor, labels: &[usize]| -> Vec<usize> {
        labels
            .iter()
            .map(|l| t.indices.iter().position(|x| x == l).map_or(0, |p| 1 << p))
            .collect()
    };
    let table = |bits: &[usize]| -> Vec<usize> {
        (0..1usize << bits.len())
            .map(|v| {
                bits.iter()
                    .enumerate()
                    .filter(|(k, _)| v >> k & 1 == 1)
                    .map(|(_, &o)| o)
                    .sum()
            })
            .collect()
    };
    let (a_out, b_out) = (table(&offsets(a, &out)), table(&offsets(b, &out)));
    let (a_sum, b_sum) = (table(&offsets(a, &shared)), table(&offsets(b, &shared)));
    let data = (0..1usize << out.len())
        .map(|o| {
            let (ao, bo) = (a_out[o], b_out[o]);
            a_sum
                .iter()
                .zip(&b_sum)
                .fold(ZERO, |acc, (&sa, &sb)| acc + a.data[ao + sa] * b.data[bo + sb])
        })
        .collect();
    NetTensor { indices: out, data }
}

/// Contracts a scalar network along `path`.
pub fn contract(net: &TensorNetwork, path: &ContractionPath) -> Result<Complex64, TnError> {
    if !net.output.is_empty() {
        return Err(TnError::NotScalar(net.output.len()));
    }
    // Validates ids and length before any arithmetic.
    cost_of(net, &path.merges)?;
    let mut pool: Vec<Option<NetTensor>> = net.tensors.iter().cloned().map(Some).collect();
    for &(a, b) in &path.merges {
        let ta = pool[a].take().expect("validated");
        let tb = pool[b].take().expect("validated");
        pool.push(Some(merge_pair(&ta, &tb)));
    }
    let last = pool.into_iter().flatten().next();
    match last {
        Some(t) if t.indices.is_empty() => Ok(t.data[0]),
        Some(t) => Err(TnError::NotScalar(t.indices.len())),
        None => Ok(ONE),
    }
}
