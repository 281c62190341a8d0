//! Grid case data model and validation.

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
}

/// Lossless branch with susceptance in per-unit. Parallel circuits may appear
/// as repeated records; their susceptances add.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub susceptance: f64,
}

/// Generator bus dynamics: swing equation plus a first-order turbine and a
/// droop governor.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: u32,
    /// Inertia J (s^2).
    pub inertia: f64,
    /// Damping D (p.u.).
    pub damping: f64,
    /// Direct valve-to-power coupling e_T.
    pub valve_gain: f64,
    /// Turbine time constant T_u (s).
    pub turbine_time: f64,
    /// Governor time constant T_g (s).
    pub governor_time: f64,
    /// Turbine control gain K_t.
    pub turbine_gain: f64,
    /// Governor droop r.
    pub droop: f64,
    /// Dispatchable capacity (p.u.), used for proportional dispatch.
    pub capacity: f64,
}

/// Aggregate dynamic load at a substation.
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: u32,
    pub inertia: f64,
    pub damping: f64,
    /// Nominal demand (p.u.); zero for pure transmission hubs.
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

impl GridCase {
    pub fn n_gens(&self) -> usize {
        self.generators.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in file order.
    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Bus positions of the generator records, in record order.
    pub fn gen_positions(&self) -> Vec<usize> {
        self.generators
            .iter()
            .map(|g| self.bus_position(g.bus).expect("validated"))
            .collect()
    }

    /// Bus positions of the load records, in record order.
    pub fn load_positions(&self) -> Vec<usize> {
        self.loads
            .iter()
            .map(|l| self.bus_position(l.bus).expect("validated"))
            .collect()
    }

    /// Disturbance channel index of a load bus.
    pub fn load_channel(&self, bus: u32) -> Option<usize> {
        self.loads.iter().position(|l| l.bus == bus)
    }

    /// Nominal demand vector in load record order.
    pub fn nominal_demand(&self) -> Vec<f64> {
        self.loads.iter().map(|l| l.demand).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.capacity).sum()
    }

    /// Structural checks shared by the parser and programmatic construction.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(ModelError::Validation("base_mva must be positive".into()));
        }
        if self.buses.is_empty() {
            return Err(ModelError::Validation("case has no buses".into()));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if self.buses[..i].iter().any(|b| b.id == bus.id) {
                return Err(ModelError::Validation(format!("duplicate bus id {}", bus.id)));
            }
        }
        if self.generators.is_empty() || self.loads.is_empty() {
            return Err(ModelError::Validation(
                "case needs at least one generator and one load bus".into(),
            ));
        }

        for br in &self.branches {
            if !(br.susceptance > 0.0) {
                return Err(ModelError::Validation(format!(
                    "branch {}-{} must have positive susceptance, got {}",
                    br.from, br.to, br.susceptance
                )));
            }
            if br.from == br.to {
                return Err(ModelError::Validation(format!("branch {}-{} is a self-loop", br.from, br.to)));
            }
            for id in [br.from, br.to] {
                if self.bus_position(id).is_none() {
                    return Err(ModelError::Validation(format!(
                        "branch {}-{} references unknown bus {}",
                        br.from, br.to, id
                    )));
                }
            }
        }

        // Every generator-kind bus needs exactly one generator record and
        // every load-kind bus exactly one load record, so that each bus has
        // dynamics attached.
        for bus in &self.buses {
            match bus.kind {
                BusKind::Generator => {
                    let count = self.generators.iter().filter(|g| g.bus == bus.id).count();
                    if count != 1 {
                        return Err(ModelError::Validation(format!(
                            "generator bus {} has {} generator records (expected 1)",
                            bus.id, count
                        )));
                    }
                }
                BusKind::Load => {
                    let count = self.loads.iter().filter(|l| l.bus == bus.id).count();
                    if count != 1 {
                        return Err(ModelError::Validation(format!(
                            "load bus {} has {} load records (expected 1)",
                            bus.id, count
                        )));
                    }
                }
            }
        }
        for g in &self.generators {
            match self.buses.iter().find(|b| b.id == g.bus) {
                Some(b) if b.kind == BusKind::Generator => {}
                Some(_) => {
                    return Err(ModelError::Validation(format!(
                        "generator record on non-generator bus {}",
                        g.bus
                    )))
                }
                None => {
                    return Err(ModelError::Validation(format!(
                        "generator record references unknown bus {}",
                        g.bus
                    )))
                }
            }
            if !(g.inertia > 0.0 && g.turbine_time > 0.0 && g.governor_time > 0.0) {
                return Err(ModelError::Validation(format!(
                    "generator at bus {}: inertia and time constants must be positive",
                    g.bus
                )));
            }
            if !(g.capacity > 0.0) {
                return Err(ModelError::Validation(format!(
                    "generator at bus {}: capacity must be positive",
                    g.bus
                )));
            }
            if g.damping < 0.0 || g.droop < 0.0 {
                return Err(ModelError::Validation(format!(
                    "generator at bus {}: damping and droop must be nonnegative",
                    g.bus
                )));
            }
        }
        for l in &self.loads {
            match self.buses.iter().find(|b| b.id == l.bus) {
                Some(b) if b.kind == BusKind::Load => {}
                Some(_) => {
                    return Err(ModelError::Validation(format!("load record on non-load bus {}", l.bus)))
                }
                None => {
                    return Err(ModelError::Validation(format!(
                        "load record references unknown bus {}",
                        l.bus
                    )))
                }
            }
            if !(l.inertia > 0.0) {
                return Err(ModelError::Validation(format!(
                    "load at bus {}: inertia must be positive",
                    l.bus
                )));
            }
            if l.damping < 0.0 || l.demand < 0.0 {
                return Err(ModelError::Validation(format!(
                    "load at bus {}: damping and demand must be nonnegative",
                    l.bus
                )));
            }
        }

        // Connectivity over the branch graph.
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let f = self.bus_position(br.from).unwrap();
            let t = self.bus_position(br.to).unwrap();
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ModelError::Validation("branch graph is not connected".into()));
        }
        Ok(())
    }
}
