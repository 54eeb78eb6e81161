//! Data re-uploading feature-map circuits.
//!
//! A feature vector is consumed in blocks of `3n` values on `n` qubits. Block 0
//! opens with a Hadamard on every qubit; every block then applies an `RZ` layer,
//! an `RY` layer, a nearest-neighbour CNOT ladder and a trailing `RZ` layer. The
//! last block is zero-padded when the feature count is not a multiple of `3n`.
//!
//! Gate conventions (phase-sensitive, shared by every backend):
//! `RZ(t) = diag(e^{-it/2}, e^{it/2})`, `RY(t) = [[cos t/2, -sin t/2], [sin t/2, cos t/2]]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("feature vector is empty")]
    EmptyFeatureVector,
    #[error("feature {0} is not finite")]
    NonFiniteFeature(usize),
    #[error("circuits act on {0} and {1} qubits")]
    QubitCountMismatch(usize, usize),
    #[error("invalid gate {0:?} on a {1}-qubit register")]
    InvalidGate(Gate, usize),
    #[error("a circuit needs at least one qubit")]
    NoQubits,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum Gate {
    H { qubit: usize },
    Rz { qubit: usize, theta: f64 },
    Ry { qubit: usize, theta: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    /// Inverse gate: rotations negate their angle, H and CNOT are self-inverse.
    pub fn inverse(self) -> Gate {
        match self {
            Gate::Rz { qubit, theta } => Gate::Rz {
                qubit,
                theta: -theta,
            },
            Gate::Ry { qubit, theta } => Gate::Ry {
                qubit,
                theta: -theta,
            },
            g => g,
        }
    }

    pub fn is_valid(&self, n_qubits: usize) -> bool {
        match *self {
            Gate::H { qubit } | Gate::Rz { qubit, .. } | Gate::Ry { qubit, .. } => qubit < n_qubits,
            Gate::Cnot { control, target } => {
                control < n_qubits && target < n_qubits && control != target
            }
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rz { theta, .. } | Gate::Ry { theta, .. } => Some(theta),
            _ => None,
        }
    }
}

/// How the `3n` features of a block are assigned to rotation slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockLayout {
    /// `RZ` on qubit `q` takes `x[3nb + q]`, `RY` takes `x[3nb + n + q]`,
    /// the trailing `RZ` takes `x[3nb + 2n + q]`.
    #[default]
    Grouped,
    /// Qubit `q` takes the consecutive triple `x[3nb + 3q .. 3nb + 3q + 3]`.
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitConfig {
    pub n_qubits: usize,
    /// Build `U(x)^dagger` instead of `U(x)`.
    #[serde(default)]
    pub adjoint: bool,
    #[serde(default)]
    pub layout: BlockLayout,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            n_qubits: 16,
            adjoint: false,
            layout: BlockLayout::Grouped,
        }
    }
}

impl CircuitConfig {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            ..Self::default()
        }
    }

    /// Features consumed per block.
    pub fn block_width(&self) -> usize {
        3 * self.n_qubits
    }

    pub fn blocks_for(&self, n_features: usize) -> usize {
        n_features.div_ceil(self.block_width())
    }

    /// Slot index into the (padded) feature vector for a rotation.
    fn slot(&self, block: usize, layer: usize, qubit: usize) -> usize {
        let n = self.n_qubits;
        let base = block * 3 * n;
        match self.layout {
            BlockLayout::Grouped => base + layer * n + qubit,
            BlockLayout::Interleaved => base + 3 * qubit + layer,
        }
    }
}

/// Total gate count for `d` features on `n` qubits: `n + B(3n + n - 1)`, `B = ceil(d / 3n)`.
pub fn gate_count(n_qubits: usize, n_features: usize) -> usize {
    let blocks = n_features.div_ceil(3 * n_qubits);
    n_qubits + blocks * (4 * n_qubits - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub config: CircuitConfig,
    gates: Vec<Gate>,
    pub n_features_consumed: usize,
}

impl Circuit {
    /// An arbitrary gate list; every gate is checked against the register size.
    pub fn from_gates(n_qubits: usize, gates: Vec<Gate>) -> Result<Self, CircuitError> {
        if n_qubits == 0 {
            return Err(CircuitError::NoQubits);
        }
        if let Some(g) = gates.iter().find(|g| !g.is_valid(n_qubits)) {
            return Err(CircuitError::InvalidGate(*g, n_qubits));
        }
        Ok(Self {
            config: CircuitConfig::new(n_qubits),
            gates,
            n_features_consumed: 0,
        })
    }

    pub fn empty(n_qubits: usize) -> Self {
        Self {
            config: CircuitConfig::new(n_qubits),
            gates: Vec::new(),
            n_features_consumed: 0,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.config.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// One JSON object per gate, newline separated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for g in &self.gates {
            let _ = writeln!(out, "{}", serde_json::to_string(g).expect("gate serializes"));
        }
        out
    }
}

/// Builds the block-encoded feature map `U(x)` (or its adjoint when `cfg.adjoint`).
pub fn build_feature_map(x: &[f64], cfg: &CircuitConfig) -> Result<Circuit, CircuitError> {
    let n = cfg.n_qubits;
    if n == 0 {
        return Err(CircuitError::NoQubits);
    }
    if x.is_empty() {
        return Err(CircuitError::EmptyFeatureVector);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(CircuitError::NonFiniteFeature(i));
    }
    let blocks = cfg.blocks_for(x.len());
    let angle = |slot: usize| x.get(slot).copied().unwrap_or(0.0);

    let mut gates = Vec::with_capacity(gate_count(n, x.len()));
    gates.extend((0..n).map(|qubit| Gate::H { qubit }));
    for b in 0..blocks {
        for q in 0..n {
            gates.push(Gate::Rz {
                qubit: q,
                theta: angle(cfg.slot(b, 0, q)),
            });
        }
        for q in 0..n {
            gates.push(Gate::Ry {
                qubit: q,
                theta: angle(cfg.slot(b, 1, q)),
            });
        }
        for q in 0..n.saturating_sub(1) {
            gates.push(Gate::Cnot {
                control: q,
                target: q + 1,
            });
        }
        for q in 0..n {
            gates.push(Gate::Rz {
                qubit: q,
                theta: angle(cfg.slot(b, 2, q)),
            });
        }
    }
    let circuit = Circuit {
        config: CircuitConfig {
            adjoint: false,
            ..cfg.clone()
        },
        gates,
        n_features_consumed: x.len(),
    };
    Ok(if cfg.adjoint {
        adjoint(&circuit)
    } else {
        circuit
    })
}

/// `c^dagger`: reversed gate order with inverted gates.
pub fn adjoint(c: &Circuit) -> Circuit {
    Circuit {
        config: CircuitConfig {
            adjoint: !c.config.adjoint,
            ..c.config.clone()
        },
        gates: c.gates.iter().rev().map(|g| g.inverse()).collect(),
        n_features_consumed: c.n_features_consumed,
    }
}

/// Runs `a` then `b`.
pub fn concat(a: &Circuit, b: &Circuit) -> Result<Circuit, CircuitError> {
    if a.n_qubits() != b.n_qubits() {
        return Err(CircuitError::QubitCountMismatch(a.n_qubits(), b.n_qubits()));
    }
    let mut gates = a.gates.clone();
    gates.extend_from_slice(&b.gates);
    Ok(Circuit {
        config: a.config.clone(),
        gates,
        n_features_consumed: a.n_features_consumed + b.n_features_consumed,
    })
}
