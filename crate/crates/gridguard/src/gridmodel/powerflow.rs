//! DC power flow for the operating point.

use ndarray::prelude::*;
use ndarray_linalg::Solve;

use super::{BusKind, GridCase, ModelError, Result};

/// Operating point from a DC power flow solve.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    /// Bus voltage angles (rad), referenced to the first bus.
    pub angles: Array1<f64>,
    /// Net bus injections (p.u.), generator positive, load negative.
    pub injections: Array1<f64>,
    /// Free-text description of the loading condition.
    pub loading_label: String,
}

impl OperatingPoint {
    pub fn angle_spread(&self) -> f64 {
        let max = self.angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.angles.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Susceptance Laplacian over the buses in file order.
pub(crate) fn susceptance_laplacian(case: &GridCase) -> Array2<f64> {
    let n = case.n_buses();
    let mut b = Array2::<f64>::zeros((n, n));
    for br in &case.branches {
        let f = case.bus_position(br.from).expect("validated");
        let t = case.bus_position(br.to).expect("validated");
        b[[f, f]] += br.susceptance;
        b[[t, t]] += br.susceptance;
        b[[f, t]] -= br.susceptance;
        b[[t, f]] -= br.susceptance;
    }
    b
}

/// Solve the DC power flow for a demand vector given in load record order.
///
/// Generators pick up the total demand in proportion to their capacity; the
/// angle of the first bus is the reference.
pub fn dc_power_flow(case: &GridCase, demand: &[f64], label: &str) -> Result<OperatingPoint> {
    if demand.len() != case.n_loads() {
        return Err(ModelError::Validation(format!(
            "demand vector has {} entries but the case has {} loads",
            demand.len(),
            case.n_loads()
        )));
    }
    let total: f64 = demand.iter().sum();
    let capacity = case.total_capacity();
    if total > capacity {
        return Err(ModelError::InfeasibleDispatch { demand: total, capacity });
    }

    let n = case.n_buses();
    let mut injections = Array1::<f64>::zeros(n);
    for (g, &pos) in case.generators.iter().zip(case.gen_positions().iter()) {
        injections[pos] = g.capacity / capacity * total;
    }
    for (d, &pos) in demand.iter().zip(case.load_positions().iter()) {
        injections[pos] -= d;
    }

    // B delta = P with the first angle pinned to zero.
    let b = susceptance_laplacian(case);
    let reduced = b.slice(s![1.., 1..]).to_owned();
    let rhs = injections.slice(s![1..]).to_owned();
    let sol = reduced.solve(&rhs).map_err(|_| ModelError::SingularNetwork)?;
    let mut angles = Array1::<f64>::zeros(n);
    angles.slice_mut(s![1..]).assign(&sol);

    Ok(OperatingPoint {
        angles,
        injections,
        loading_label: label.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse::two_bus_case;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_bus_angle() {
        // delta = P / b with the generator at the reference bus.
        let case = two_bus_case();
        let op = dc_power_flow(&case, &[1.0], "unit").unwrap();
        assert_abs_diff_eq!(op.angles[0], 0.0);
        assert_abs_diff_eq!(op.angles[1], -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(op.injections.sum(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_demand_zero_angles() {
        let case = two_bus_case();
        let op = dc_power_flow(&case, &[0.0], "idle").unwrap();
        assert!(op.angles.iter().all(|a| a.abs() < 1e-14));
    }

    #[test]
    fn infeasible_dispatch_rejected() {
        let case = two_bus_case();
        let err = dc_power_flow(&case, &[1000.0], "overload").unwrap_err();
        assert!(matches!(err, ModelError::InfeasibleDispatch { .. }));
    }

    #[test]
    fn branch_flows_consistent() {
        let case = two_bus_case();
        let op = dc_power_flow(&case, &[0.7], "check").unwrap();
        let flow = 10.0 * (op.angles[0] - op.angles[1]);
        assert_abs_diff_eq!(flow, 0.7, epsilon = 1e-12);
    }
}
