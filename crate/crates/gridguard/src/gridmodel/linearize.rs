//! Assembly of the closed-loop linearized system matrices.
//!
//! State ordering is `[wG, wL, PG, PL, PT, a]`: generator and load bus
//! frequencies, net generator injections, load drawn powers, turbine
//! mechanical powers, and governor valve positions. Network coupling enters
//! through the branch Laplacian weighted by `b_ij * cos(delta_i - delta_j)`
//! at the operating point, so the matrices change with loading.

use ndarray::prelude::*;

use super::powerflow::susceptance_laplacian;
use super::{GridCase, ModelError, OperatingPoint, Result};
use crate::matcore::{decompose_semistable, SemistableDecomposition};

/// One of the six state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateBlock {
    FreqGen,
    FreqLoad,
    PowerGen,
    PowerLoad,
    PowerTurbine,
    Valve,
}

impl StateBlock {
    pub fn prefix(self) -> &'static str {
        match self {
            StateBlock::FreqGen => "wG",
            StateBlock::FreqLoad => "wL",
            StateBlock::PowerGen => "PG",
            StateBlock::PowerLoad => "PL",
            StateBlock::PowerTurbine => "PT",
            StateBlock::Valve => "a",
        }
    }

    pub fn from_prefix(s: &str) -> Option<Self> {
        match s {
            "wG" => Some(StateBlock::FreqGen),
            "wL" => Some(StateBlock::FreqLoad),
            "PG" => Some(StateBlock::PowerGen),
            "PL" => Some(StateBlock::PowerLoad),
            "PT" => Some(StateBlock::PowerTurbine),
            "a" => Some(StateBlock::Valve),
            _ => None,
        }
    }
}

/// Linearized closed-loop grid model around an operating point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    /// Closed-loop state matrix, `n x n`.
    pub a_cl: Array2<f64>,
    /// Disturbance input matrix, `n x n_l` (one channel per load bus).
    pub g: Array2<f64>,
    /// Output map, `l x n`; identity unless outputs were selected.
    pub c: Array2<f64>,
    /// Operating-point value of each output; received measurements are
    /// absolute, `y = output_offset + C x`, with `x` the deviation state.
    pub output_offset: Array1<f64>,
    pub state_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub n: usize,
    pub n_g: usize,
    pub n_l: usize,
    /// Certificate that `a_cl` has exactly one (semisimple) zero mode.
    pub semistability: SemistableDecomposition,
    pub operating_point: OperatingPoint,
}

impl LinearModel {
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.state_labels.iter().position(|l| l == label)
    }

    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.output_labels.iter().position(|l| l == label)
    }

    /// Zero-mode left eigenvector expressed in output coordinates (`C v_max`).
    pub fn output_vmax(&self) -> Array1<f64> {
        self.c.dot(&self.semistability.v_max)
    }

    /// Offset of a state block within the state vector.
    pub fn block_offset(&self, block: StateBlock) -> usize {
        match block {
            StateBlock::FreqGen => 0,
            StateBlock::FreqLoad => self.n_g,
            StateBlock::PowerGen => self.n_g + self.n_l,
            StateBlock::PowerLoad => 2 * self.n_g + self.n_l,
            StateBlock::PowerTurbine => 2 * self.n_g + 2 * self.n_l,
            StateBlock::Valve => 3 * self.n_g + 2 * self.n_l,
        }
    }

    pub fn block_len(&self, block: StateBlock) -> usize {
        match block {
            StateBlock::FreqGen
            | StateBlock::PowerGen
            | StateBlock::PowerTurbine
            | StateBlock::Valve => self.n_g,
            StateBlock::FreqLoad | StateBlock::PowerLoad => self.n_l,
        }
    }
}

fn state_labels(n_g: usize, n_l: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(4 * n_g + 2 * n_l);
    for block in [
        StateBlock::FreqGen,
        StateBlock::FreqLoad,
        StateBlock::PowerGen,
        StateBlock::PowerLoad,
        StateBlock::PowerTurbine,
        StateBlock::Valve,
    ] {
        let len = match block {
            StateBlock::FreqLoad | StateBlock::PowerLoad => n_l,
            _ => n_g,
        };
        for k in 1..=len {
            labels.push(format!("{}{}", block.prefix(), k));
        }
    }
    labels
}

/// Branch Laplacian weighted by `b_ij * cos(delta_i - delta_j)`.
fn weighted_laplacian(case: &GridCase, op: &OperatingPoint) -> Array2<f64> {
    let n = case.n_buses();
    let mut w = Array2::<f64>::zeros((n, n));
    for br in &case.branches {
        let f = case.bus_position(br.from).expect("validated");
        let t = case.bus_position(br.to).expect("validated");
        let weight = br.susceptance * (op.angles[f] - op.angles[t]).cos();
        w[[f, f]] += weight;
        w[[t, t]] += weight;
        w[[f, t]] -= weight;
        w[[t, f]] -= weight;
    }
    w
}

/// Build the closed-loop model at an operating point.
pub fn linearize(case: &GridCase, op: &OperatingPoint) -> Result<LinearModel> {
    case.validate()?;
    if op.angles.len() != case.n_buses() {
        return Err(ModelError::Validation(format!(
            "operating point has {} angles for {} buses",
            op.angles.len(),
            case.n_buses()
        )));
    }
    let n_g = case.n_gens();
    let n_l = case.n_loads();
    let n = 4 * n_g + 2 * n_l;

    let w = weighted_laplacian(case, op);
    let gen_pos = case.gen_positions();
    let load_pos = case.load_positions();

    let off_wg = 0;
    let off_wl = n_g;
    let off_pg = n_g + n_l;
    let off_pl = 2 * n_g + n_l;
    let off_pt = 2 * n_g + 2 * n_l;
    let off_a = 3 * n_g + 2 * n_l;

    let mut a = Array2::<f64>::zeros((n, n));
    for (i, gen) in case.generators.iter().enumerate() {
        let ji = 1.0 / gen.inertia;
        // Swing equation: J w' + D w = P_T - P + e_T a
        a[[off_wg + i, off_wg + i]] = -gen.damping * ji;
        a[[off_wg + i, off_pg + i]] = -ji;
        a[[off_wg + i, off_pt + i]] = ji;
        a[[off_wg + i, off_a + i]] = gen.valve_gain * ji;
        // Turbine: T_u P_T' = -P_T + K_t a
        a[[off_pt + i, off_pt + i]] = -1.0 / gen.turbine_time;
        a[[off_pt + i, off_a + i]] = gen.turbine_gain / gen.turbine_time;
        // Governor: T_g a' = -r a - w
        a[[off_a + i, off_wg + i]] = -1.0 / gen.governor_time;
        a[[off_a + i, off_a + i]] = -gen.droop / gen.governor_time;
    }
    for (j, load) in case.loads.iter().enumerate() {
        let jl = 1.0 / load.inertia;
        // Load swing: J w' + D w = -P - L, with the drawn power as state.
        a[[off_wl + j, off_wl + j]] = -load.damping * jl;
        a[[off_wl + j, off_pl + j]] = jl;
    }
    // Network coupling through the operating-point-weighted Laplacian:
    // P_G' follows the injections, P_L' the drawn powers.
    for (i, &gp) in gen_pos.iter().enumerate() {
        for (k, &gp2) in gen_pos.iter().enumerate() {
            a[[off_pg + i, off_wg + k]] = w[[gp, gp2]];
        }
        for (k, &lp) in load_pos.iter().enumerate() {
            a[[off_pg + i, off_wl + k]] = w[[gp, lp]];
        }
    }
    for (j, &lp) in load_pos.iter().enumerate() {
        for (k, &gp) in gen_pos.iter().enumerate() {
            a[[off_pl + j, off_wg + k]] = -w[[lp, gp]];
        }
        for (k, &lp2) in load_pos.iter().enumerate() {
            a[[off_pl + j, off_wl + k]] = -w[[lp, lp2]];
        }
    }

    let mut g = Array2::<f64>::zeros((n, n_l));
    for (j, load) in case.loads.iter().enumerate() {
        g[[off_wl + j, j]] = -1.0 / load.inertia;
    }

    // Operating-point values per state: dispatched injections for PG and PT
    // (mechanical equals electrical power at steady state), served demand
    // for PL, the valve position holding the turbine output, and zero
    // frequency deviation.
    let mut offset = Array1::<f64>::zeros(n);
    for (i, (gen, &pos)) in case.generators.iter().zip(gen_pos.iter()).enumerate() {
        let dispatch = op.injections[pos];
        offset[off_pg + i] = dispatch;
        offset[off_pt + i] = dispatch;
        offset[off_a + i] = dispatch / gen.turbine_gain;
    }
    for (j, &pos) in load_pos.iter().enumerate() {
        offset[off_pl + j] = -op.injections[pos];
    }

    let semistability = decompose_semistable(&a, None)?;
    let labels = state_labels(n_g, n_l);
    Ok(LinearModel {
        a_cl: a,
        g,
        c: Array2::eye(n),
        output_offset: offset,
        output_labels: labels.clone(),
        state_labels: labels,
        n,
        n_g,
        n_l,
        semistability,
        operating_point: op.clone(),
    })
}

/// Restrict the output map to named states.
///
/// Each selector is either an exact state label (`PG8`) or a block prefix
/// (`PG`) that expands to the whole block in state order.
pub fn select_outputs(model: &LinearModel, selection: &[&str]) -> Result<LinearModel> {
    let mut rows: Vec<usize> = Vec::new();
    for sel in selection {
        if let Some(block) = StateBlock::from_prefix(sel) {
            let off = model.block_offset(block);
            rows.extend(off..off + model.block_len(block));
        } else if let Some(idx) = model.state_index(sel) {
            rows.push(idx);
        } else {
            return Err(ModelError::UnknownStateLabel(sel.to_string()));
        }
    }
    let mut c = Array2::<f64>::zeros((rows.len(), model.n));
    let mut output_labels = Vec::with_capacity(rows.len());
    let mut offset = Array1::<f64>::zeros(rows.len());
    for (r, &idx) in rows.iter().enumerate() {
        c[[r, idx]] = 1.0;
        offset[r] = model.output_offset[idx];
        output_labels.push(model.state_labels[idx].clone());
    }
    let mut out = model.clone();
    out.c = c;
    out.output_offset = offset;
    out.output_labels = output_labels;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::parse::two_bus_case;
    use super::super::{dc_power_flow, parse_case_str};
    use super::*;

    fn two_bus_model() -> LinearModel {
        let case = two_bus_case();
        let op = dc_power_flow(&case, &[1.0], "unit").unwrap();
        linearize(&case, &op).unwrap()
    }

    #[test]
    fn two_bus_hand_assembly() {
        // One generator (J=5, D=1.2, e_T=1, T_u=0.3, T_g=0.25, K_t=1, r=0.04)
        // and one load (J=2.5, D=0.9) over a single branch b=10 at angle
        // spread 0.1 rad. States: [wG, wL, PG, PL, PT, a].
        let model = two_bus_model();
        let w = 10.0 * 0.1f64.cos();
        let expected = array![
            [-1.2 / 5.0, 0.0, -1.0 / 5.0, 0.0, 1.0 / 5.0, 1.0 / 5.0],
            [0.0, -0.9 / 2.5, 0.0, 1.0 / 2.5, 0.0, 0.0],
            [w, -w, 0.0, 0.0, 0.0, 0.0],
            [w, -w, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, -1.0 / 0.3, 1.0 / 0.3],
            [-1.0 / 0.25, 0.0, 0.0, 0.0, 0.0, -0.04 / 0.25]
        ];
        let diff = (&model.a_cl - &expected).iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "max entry deviation {diff}");
        assert_eq!(model.n, 6);
    }

    #[test]
    fn disturbance_matrix_shape() {
        let model = two_bus_model();
        assert_eq!(model.g.dim(), (6, 1));
        assert_eq!(model.g[[1, 0]], -1.0 / 2.5);
        assert_eq!(model.g.iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn generator_frequency_row_block() {
        // The wG rows must be exactly [-D/J, 0, -1/J, 0, 1/J, e_T/J] per
        // generator, regardless of the network.
        let model = two_bus_model();
        let i = 0;
        assert_eq!(model.a_cl[[i, 0]], -1.2 / 5.0);
        assert_eq!(model.a_cl[[i, 1]], 0.0);
        assert_eq!(model.a_cl[[i, 2]], -1.0 / 5.0);
        assert_eq!(model.a_cl[[i, 3]], 0.0);
        assert_eq!(model.a_cl[[i, 4]], 1.0 / 5.0);
        assert_eq!(model.a_cl[[i, 5]], 1.0 / 5.0);
    }

    #[test]
    fn weighted_laplacian_rows_sum_to_zero() {
        let case = two_bus_case();
        let op = dc_power_flow(&case, &[1.0], "unit").unwrap();
        let w = weighted_laplacian(&case, &op);
        for row in w.rows() {
            assert!(row.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn semistable_certificate_attached() {
        let model = two_bus_model();
        assert_eq!(model.semistability.stable_eigenvalues.len(), 5);
        assert!(model.semistability.max_stable_re() < 0.0);
    }

    #[test]
    fn deterministic_assembly() {
        let a = two_bus_model();
        let b = two_bus_model();
        assert_eq!(a.a_cl, b.a_cl);
        assert_eq!(a.g, b.g);
        assert_eq!(a.semistability.v_max, b.semistability.v_max);
    }

    #[test]
    fn demand_changes_only_network_blocks() {
        let case = two_bus_case();
        let op1 = dc_power_flow(&case, &[1.0], "a").unwrap();
        let op2 = dc_power_flow(&case, &[0.5], "b").unwrap();
        let m1 = linearize(&case, &op1).unwrap();
        let m2 = linearize(&case, &op2).unwrap();
        // Only the PG/PL row blocks against the frequency columns may move.
        for r in 0..6 {
            for c in 0..6 {
                let in_network_block = (2..=3).contains(&r) && c < 2;
                if !in_network_block {
                    assert_eq!(m1.a_cl[[r, c]], m2.a_cl[[r, c]], "({r},{c})");
                }
            }
        }
        assert_ne!(m1.a_cl[[2, 0]], m2.a_cl[[2, 0]]);
    }

    #[test]
    fn select_outputs_blocks_and_labels() {
        let model = two_bus_model();
        let sel = select_outputs(&model, &["PG"]).unwrap();
        assert_eq!(sel.n_outputs(), 1);
        assert_eq!(sel.output_labels, vec!["PG1"]);
        assert_eq!(sel.c[[0, 2]], 1.0);

        let all = select_outputs(&model, &["wG", "wL", "PG", "PL", "PT", "a"]).unwrap();
        assert_eq!(all.n_outputs(), 6);
        assert_eq!(all.c, Array2::<f64>::eye(6));

        let err = select_outputs(&model, &["PX9"]).unwrap_err();
        assert!(matches!(err, ModelError::UnknownStateLabel(_)));
    }

    #[test]
    fn structure_preserving_state_count() {
        // 2 generators + 3 loads -> n = 4*2 + 2*3 = 14.
        let case = parse_case_str(
            "[system]\nbase_mva 100\n\
             [bus]\n1 generator\n2 generator\n3 load\n4 load\n5 load\n\
             [branch]\n1 3 10\n2 4 8\n3 4 5\n4 5 4\n\
             [generator]\n1 5 1.2 1 0.3 0.25 1 0.04 2\n2 4 1.0 1 0.35 0.2 1 0.05 1\n\
             [load]\n3 2.5 0.9 0.8\n4 2.0 0.7 0.5\n5 2.2 0.8 0.3\n",
        )
        .unwrap();
        let op = dc_power_flow(&case, &case.nominal_demand(), "nominal").unwrap();
        let model = linearize(&case, &op).unwrap();
        assert_eq!(model.n, 14);
        assert_eq!(model.state_labels.len(), 14);
        assert_eq!(model.state_labels[0], "wG1");
        assert_eq!(model.state_labels[13], "a2");
    }
}
