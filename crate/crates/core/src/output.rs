//! Legacy ASCII VTK snapshots and the CSV diagnostics series.

use std::io::Write;

use crate::diagnostics::DiagnosticRecord;
use crate::element;
use crate::error::Result;
use crate::fem::{FeSpace, TimeState};
use crate::material;
use crate::scalar::Real;

/// VTK cell type ids.
pub const VTK_BIQUADRATIC_QUAD: u8 = 28;
pub const VTK_TRIQUADRATIC_HEXAHEDRON: u8 = 29;

/// Header of `series.csv`.
pub const SERIES_HEADER: &str = "step,t,E_total,E_kin,E_dev,E_press,volume,volerr_L1,volerr_L2,volerr_Linf,schur_iters";

fn local(i: usize, j: usize, k: usize) -> usize {
    i + 3 * j + 9 * k
}

/// Local Q2 node index for each position of the VTK quadratic cell.
pub fn vtk_node_order(dim: usize) -> Vec<usize> {
    if dim == 2 {
        [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1)]
            .iter()
            .map(|&(i, j)| local(i, j, 0))
            .collect()
    } else {
        let ijk = [
            (0, 0, 0), (2, 0, 0), (2, 2, 0), (0, 2, 0),
            (0, 0, 2), (2, 0, 2), (2, 2, 2), (0, 2, 2),
            (1, 0, 0), (2, 1, 0), (1, 2, 0), (0, 1, 0),
            (1, 0, 2), (2, 1, 2), (1, 2, 2), (0, 1, 2),
            (0, 0, 1), (2, 0, 1), (2, 2, 1), (0, 2, 1),
            (0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2),
            (1, 1, 1),
        ];
        ijk.iter().map(|&(i, j, k)| local(i, j, k)).collect()
    }
}

/// Q1 pressure interpolated to every Q2 node.
pub fn pressure_at_nodes<T: Real>(space: &FeSpace<T>, p: &[T]) -> Vec<T> {
    let dim = space.dim();
    let n1 = space.n1();
    let mut out = vec![T::zero(); space.mesh.n_q2_nodes()];
    let mut vals = vec![T::zero(); n1];
    let mut grads = vec![[T::zero(); 3]; n1];
    for e in 0..space.mesh.n_elements() {
        let q1 = space.mesh.q1_element(e);
        for (l, &node) in space.mesh.q2_element(e).iter().enumerate() {
            let xi = [
                T::from_count(l % 3) - T::one(),
                T::from_count((l / 3) % 3) - T::one(),
                if dim == 3 { T::from_count(l / 9) - T::one() } else { T::zero() },
            ];
            element::q1_shape(dim, xi, &mut vals, &mut grads);
            out[node] = vals.iter().zip(q1).map(|(&v, &i)| v * p[i]).sum();
        }
    }
    out
}

/// Smallest `J` over the quadrature points of each element.
pub fn jacobian_min<T: Real>(space: &FeSpace<T>, u: &[T]) -> Vec<T> {
    (0..space.mesh.n_elements())
        .map(|e| {
            (0..space.n_qp)
                .map(|q| material::kinematics(&space.field_gradient(u, e, q)).j)
                .fold(T::infinity(), T::min)
        })
        .collect()
}

fn fmt<T: Real>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

/// Writes an unstructured-grid snapshot in reference coordinates.
pub fn write_vtk<T: Real, W: Write>(out: &mut W, space: &FeSpace<T>, state: &TimeState<T>) -> Result<()> {
    let mesh = &space.mesh;
    let dim = mesh.dim;
    let n2 = space.n2();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "elastodyn step {} t {}", state.step, fmt(state.t))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_q2_nodes())?;
    for x in &mesh.nodes {
        writeln!(out, "{} {} {}", fmt(x[0]), fmt(x[1]), fmt(x[2]))?;
    }
    let order = vtk_node_order(dim);
    let ne = mesh.n_elements();
    writeln!(out, "CELLS {} {}", ne, ne * (n2 + 1))?;
    for e in 0..ne {
        let conn = mesh.q2_element(e);
        let ids: Vec<String> = order.iter().map(|&l| conn[l].to_string()).collect();
        writeln!(out, "{} {}", n2, ids.join(" "))?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    let ct = if dim == 2 { VTK_BIQUADRATIC_QUAD } else { VTK_TRIQUADRATIC_HEXAHEDRON };
    for _ in 0..ne {
        writeln!(out, "{ct}")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.n_q2_nodes())?;
    for (name, field) in [("displacement", &state.u), ("velocity", &state.v)] {
        writeln!(out, "VECTORS {name} double")?;
        for n in 0..mesh.n_q2_nodes() {
            let c = |k: usize| if k < dim { field[n * dim + k] } else { T::zero() };
            writeln!(out, "{} {} {}", fmt(c(0)), fmt(c(1)), fmt(c(2)))?;
        }
    }
    writeln!(out, "SCALARS pressure double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for p in pressure_at_nodes(space, &state.p) {
        writeln!(out, "{}", fmt(p))?;
    }
    writeln!(out, "CELL_DATA {ne}")?;
    writeln!(out, "SCALARS jacobian_min double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for j in jacobian_min(space, &state.u) {
        writeln!(out, "{}", fmt(j))?;
    }
    Ok(())
}

/// One `series.csv` row.
pub fn series_row<T: Real>(step: usize, r: &DiagnosticRecord<T>, schur_iters: usize) -> String {
    let vals = [
        r.t,
        r.energy_total,
        r.energy_kinetic,
        r.energy_deviatoric,
        r.energy_pressure,
        r.volume,
        r.vol_err_l1,
        r.vol_err_l2,
        r.vol_err_linf,
    ];
    let mut s = step.to_string();
    for v in vals {
        s.push(',');
        s.push_str(&fmt(v));
    }
    s.push(',');
    s.push_str(&schur_iters.to_string());
    s
}
