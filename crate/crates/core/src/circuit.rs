//! Multi-controlled gates with polarized controls, disjoint-support layers,
//! circuits, and their CCX cost accounting.
//!
//! Sites are 1-based, `1..=n`. Multi-controlled gates are costed as if
//! decomposed into a ladder of `2m - 3` Toffolis using `m - 2` ancillas
//! (`m >= 3` controls); gates with at most two controls cost one Toffoli.
//! Ancillas only exist in the cost model.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Serde helpers writing booleans as `0`/`1`.
mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected bit 0 or 1, got {other}"))),
        }
    }

    pub mod opt {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(b) => s.serialize_some(&u8::from(*b)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
            match Option::<u8>::deserialize(d)? {
                None => Ok(None),
                Some(0) => Ok(Some(false)),
                Some(1) => Ok(Some(true)),
                Some(other) => Err(serde::de::Error::custom(format!("expected bit 0 or 1, got {other}"))),
            }
        }
    }
}

/// A requirement that site `pos` holds `val`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlTerm {
    pub pos: u32,
    #[serde(with = "bit")]
    pub val: bool,
}

impl ControlTerm {
    pub fn new(pos: u32, val: bool) -> Self {
        Self { pos, val }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// Flip `target` when every control holds.
    Mcx,
    /// Negate the sign when every control holds and `target` equals
    /// `target_value`.
    SignedMcz,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub controls: Vec<ControlTerm>,
    pub target: u32,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "bit::opt")]
    pub target_value: Option<bool>,
}

impl Gate {
    pub fn mcx(controls: Vec<ControlTerm>, target: u32) -> Self {
        Self {
            kind: GateKind::Mcx,
            controls,
            target,
            target_value: None,
        }
    }

    pub fn signed_mcz(controls: Vec<ControlTerm>, target: u32, target_value: bool) -> Self {
        Self {
            kind: GateKind::SignedMcz,
            controls,
            target,
            target_value: Some(target_value),
        }
    }

    /// Every site the gate reads or writes.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.controls.iter().map(|c| c.pos).chain(std::iter::once(self.target))
    }

    /// The full condition under which the gate acts: its controls, plus the
    /// target requirement for a signed MCZ.
    pub fn condition(&self) -> Vec<ControlTerm> {
        let mut cond = self.controls.clone();
        if let (GateKind::SignedMcz, Some(v)) = (self.kind, self.target_value) {
            cond.push(ControlTerm::new(self.target, v));
        }
        cond
    }

    /// Toffoli depth of the ancilla-ladder decomposition.
    pub fn ccx_depth(&self) -> u64 {
        ccx_cost(self.controls.len())
    }
}

/// `max(1, 2m - 3)` Toffolis for an `m`-controlled gate. A signed MCZ is
/// costed by its explicit controls: the target condition is the Z itself.
pub fn ccx_cost(controls: usize) -> u64 {
    (2 * controls as u64).saturating_sub(3).max(1)
}

/// Gates acting in parallel. Construct with [`Layer::new`] to enforce
/// disjoint supports; deserialized layers are checked by [`validate`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layer {
    pub gates: Vec<Gate>,
}

impl Layer {
    pub fn new(gates: Vec<Gate>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, g) in gates.iter().enumerate() {
            for site in g.support() {
                if !seen.insert(site) {
                    return Err(invalid(format!("gate {i} reuses site {site} within one layer")));
                }
            }
        }
        Ok(Self { gates })
    }

    pub fn single(gate: Gate) -> Self {
        Self { gates: vec![gate] }
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

/// Conditions evaluated against the state just before layer `layer` runs
/// (`layer == layers.len()` means after the last layer).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub layer: usize,
    pub controls: Vec<ControlTerm>,
}

/// A named family of rounds whose condition matrix is of interest, e.g. the
/// first-stage rounds of the gate-count optimized thermalizer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionGroup {
    pub name: String,
    pub rounds: Vec<Round>,
}

/// Layers `layers.0..layers.1` draw controls from `controls` and target
/// sites in `targets` (inclusive ranges).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub phase: String,
    pub controls: (u32, u32),
    pub targets: (u32, u32),
    pub groups: u32,
    pub layers: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n: u32,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub condition_groups: Vec<ConditionGroup>,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default)]
    pub rng: String,
}

impl Circuit {
    pub fn new(n: u32) -> Self {
        Self {
            n,
            seed: 0,
            generator: String::new(),
            params: serde_json::Value::Null,
            layers: Vec::new(),
            stages: Vec::new(),
            condition_groups: Vec::new(),
            tool_version: crate::VERSION.to_string(),
            rng: crate::rng::RNG_ALGORITHM.to_string(),
        }
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flat_map(|l| l.gates.iter())
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(|l| l.gates.len()).sum()
    }

    pub fn condition_group(&self, name: &str) -> Option<&ConditionGroup> {
        self.condition_groups.iter().find(|g| g.name == name)
    }

    /// Appends `other`'s layers (and shifted metadata) after this circuit's.
    pub fn append(&mut self, other: &Circuit) -> Result<()> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch(self.n as usize, other.n as usize));
        }
        let offset = self.layers.len();
        self.layers.extend(other.layers.iter().cloned());
        self.stages.extend(other.stages.iter().map(|s| Stage {
            layers: (s.layers.0 + offset, s.layers.1 + offset),
            ..s.clone()
        }));
        self.condition_groups.extend(other.condition_groups.iter().map(|g| ConditionGroup {
            name: g.name.clone(),
            rounds: g
                .rounds
                .iter()
                .map(|r| Round {
                    layer: r.layer + offset,
                    controls: r.controls.clone(),
                })
                .collect(),
        }));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuit serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostModel {
    /// Every multi-controlled gate costs one time step.
    Unit,
    /// Gates are expanded into Toffoli ladders.
    Decomposed,
}

pub fn depth(c: &Circuit, model: CostModel) -> u64 {
    match model {
        CostModel::Unit => c.layers.len() as u64,
        CostModel::Decomposed => c
            .layers
            .iter()
            // An empty layer still occupies its time slot.
            .map(|l| l.gates.iter().map(Gate::ccx_depth).max().unwrap_or(1))
            .sum(),
    }
}

pub fn ccx_equivalent_count(c: &Circuit) -> u64 {
    c.gates().map(Gate::ccx_depth).sum()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    SiteOutOfRange { layer: usize, gate: usize, site: u32 },
    DuplicateControl { layer: usize, gate: usize, site: u32 },
    TargetIsControl { layer: usize, gate: usize, site: u32 },
    OverlappingSupport { layer: usize, gate: usize, other: usize, site: u32 },
    MissingTargetValue { layer: usize, gate: usize },
    UnexpectedTargetValue { layer: usize, gate: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SiteOutOfRange { layer, gate, site } => write!(f, "layer {layer} gate {gate}: site {site} out of range"),
            Self::DuplicateControl { layer, gate, site } => write!(f, "layer {layer} gate {gate}: site {site} controlled twice"),
            Self::TargetIsControl { layer, gate, site } => write!(f, "layer {layer} gate {gate}: target {site} is also a control"),
            Self::OverlappingSupport { layer, gate, other, site } => {
                write!(f, "layer {layer}: gates {other} and {gate} share site {site}")
            }
            Self::MissingTargetValue { layer, gate } => write!(f, "layer {layer} gate {gate}: signed MCZ without a target value"),
            Self::UnexpectedTargetValue { layer, gate } => write!(f, "layer {layer} gate {gate}: MCX with a target value"),
        }
    }
}

/// All structural problems in `c`; empty when the circuit is well formed.
pub fn validate(c: &Circuit) -> Vec<Violation> {
    let mut out = Vec::new();
    let in_range = |site: u32| (1..=c.n).contains(&site);
    for (li, layer) in c.layers.iter().enumerate() {
        let mut owner = std::collections::HashMap::new();
        for (gi, g) in layer.gates.iter().enumerate() {
            let mut controls = HashSet::new();
            for term in &g.controls {
                if !in_range(term.pos) {
                    out.push(Violation::SiteOutOfRange { layer: li, gate: gi, site: term.pos });
                }
                if !controls.insert(term.pos) {
                    out.push(Violation::DuplicateControl { layer: li, gate: gi, site: term.pos });
                }
            }
            if !in_range(g.target) {
                out.push(Violation::SiteOutOfRange { layer: li, gate: gi, site: g.target });
            }
            if controls.contains(&g.target) {
                out.push(Violation::TargetIsControl { layer: li, gate: gi, site: g.target });
            }
            match (g.kind, g.target_value) {
                (GateKind::SignedMcz, None) => out.push(Violation::MissingTargetValue { layer: li, gate: gi }),
                (GateKind::Mcx, Some(_)) => out.push(Violation::UnexpectedTargetValue { layer: li, gate: gi }),
                _ => {}
            }
            controls.insert(g.target);
            for site in controls {
                if let Some(&other) = owner.get(&site) {
                    out.push(Violation::OverlappingSupport { layer: li, gate: gi, other, site });
                } else {
                    owner.insert(site, gi);
                }
            }
        }
    }
    out.sort_by_key(|v| format!("{v}"));
    out
}
