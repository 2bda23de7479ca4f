//! Hand-derived linearization of the Navier-Stokes right-hand side.
//!
//! `rhs_tangent` is the product-rule expansion of every flux; `rhs_adjoint`
//! walks the same terms in reverse, using `apply_transpose` for every
//! derivative and `(AB + CD)^T = B^T A^T + D^T C^T` to split products.
//! `rhs_complex` is the same kernel as the primal evaluated in complex
//! arithmetic and serves as the independent oracle.

use crate::error::{check_len, Error, Result};
use crate::grid_field::{FluidParams, StateField};
use crate::ns_rhs::{base_quantities, rhs_generic, ControlSource, NsOperators};
use crate::scalar::CStep;

/// `(dR/du) v + (dR/dsrc) src_dot` at `u`, flat component-major slices.
pub fn rhs_tangent_flat(
    ops: &NsOperators,
    params: &FluidParams,
    u: &[f64],
    src: Option<&[f64]>,
    v: &[f64],
    src_dot: Option<&[f64]>,
    out: &mut [f64],
) {
    let n = ops.npts();
    let nd = ops.ndim();
    let gm1 = params.gamma - 1.0;
    let kappa = params.lambda() * gm1;
    let mu = params.mu();
    let cfac = params.temperature_factor();
    let rho = &u[..n];
    let p = &u[(nd + 1) * n..];
    let rho_d = &v[..n];
    let p_d = &v[(nd + 1) * n..];
    let m = |i: usize| &u[(1 + i) * n..(2 + i) * n];
    let m_d = |i: usize| &v[(1 + i) * n..(2 + i) * n];
    let b = base_quantities(ops, params, u);

    let vel_d: Vec<Vec<f64>> = (0..nd)
        .map(|i| {
            let (mi_d, ui) = (m_d(i), &b.vel[i]);
            (0..n).map(|k| (mi_d[k] - ui[k] * rho_d[k]) / rho[k]).collect()
        })
        .collect();
    let temp_d: Vec<f64> = (0..n).map(|k| (cfac * p_d[k] - b.temp[k] * rho_d[k]) / rho[k]).collect();
    let grad_d: Vec<Vec<Vec<f64>>> = (0..nd)
        .map(|i| (0..nd).map(|j| ops.d(j, &vel_d[i])).collect())
        .collect();
    let mut div_d = vec![0.0; n];
    for (i, g) in grad_d.iter().enumerate() {
        for (dv, gv) in div_d.iter_mut().zip(&g[i]) {
            *dv += gv;
        }
    }
    let tau_d = |i: usize, j: usize, k: usize| {
        let mut s = grad_d[i][j][k] + grad_d[j][i][k];
        if i == j {
            s -= div_d[k] * (2.0 / 3.0);
        }
        s * mu
    };

    // continuity
    out[..n].fill(0.0);
    for i in 0..nd {
        let dm = ops.d(i, m_d(i));
        for (o, d) in out[..n].iter_mut().zip(dm) {
            *o -= d;
        }
    }
    // momentum
    for i in 0..nd {
        let mut acc = vec![0.0; n];
        for j in 0..nd {
            let (mj, mj_d) = (m(j), m_d(j));
            let flux: Vec<f64> = (0..n)
                .map(|k| {
                    let mut f = mj_d[k] * b.vel[i][k] + mj[k] * vel_d[i][k] - tau_d(j, i, k);
                    if i == j {
                        f += p_d[k];
                    }
                    f
                })
                .collect();
            for (a, d) in acc.iter_mut().zip(ops.d(j, &flux)) {
                *a -= d;
            }
        }
        out[(1 + i) * n..(2 + i) * n].copy_from_slice(&acc);
    }
    // pressure
    let mut acc = vec![0.0; n];
    for i in 0..nd {
        let dtemp = ops.d(i, &temp_d);
        let flux: Vec<f64> = (0..n)
            .map(|k| p_d[k] * b.vel[i][k] + p[k] * vel_d[i][k] - kappa * dtemp[k])
            .collect();
        for (a, d) in acc.iter_mut().zip(ops.d(i, &flux)) {
            *a -= d;
        }
    }
    for k in 0..n {
        let mut diss = 0.0;
        for i in 0..nd {
            for j in 0..nd {
                diss += tau_d(i, j, k) * b.grad[i][j][k] + b.tau[i][j][k] * grad_d[i][j][k];
            }
        }
        acc[k] += -gm1 * (p_d[k] * b.div[k] + p[k] * div_d[k]) + gm1 * diss;
    }
    if let Some(s) = src {
        for k in 0..n {
            acc[k] += params.r_gas * rho_d[k] * s[k];
        }
    }
    if let Some(sd) = src_dot {
        for k in 0..n {
            acc[k] += params.r_gas * rho[k] * sd[k];
        }
    }
    out[(nd + 1) * n..].copy_from_slice(&acc);
}

/// `(dR/du)^T xi` at `u`, flat component-major slices.
pub fn rhs_adjoint_flat(
    ops: &NsOperators,
    params: &FluidParams,
    u: &[f64],
    src: Option<&[f64]>,
    xi: &[f64],
    out: &mut [f64],
) {
    let n = ops.npts();
    let nd = ops.ndim();
    let gm1 = params.gamma - 1.0;
    let kappa = params.lambda() * gm1;
    let mu = params.mu();
    let cfac = params.temperature_factor();
    let rho = &u[..n];
    let p = &u[(nd + 1) * n..];
    let m = |i: usize| &u[(1 + i) * n..(2 + i) * n];
    let xi_rho = &xi[..n];
    let xi_p = &xi[(nd + 1) * n..];
    let b = base_quantities(ops, params, u);

    let mut rho_b = vec![0.0; n];
    let mut m_b = vec![vec![0.0; n]; nd];
    let mut p_b = vec![0.0; n];
    let mut vel_b = vec![vec![0.0; n]; nd];
    let mut temp_b = vec![0.0; n];
    let mut grad_b = vec![vec![vec![0.0; n]; nd]; nd];
    let mut tau_b = vec![vec![vec![0.0; n]; nd]; nd];
    let mut div_b = vec![0.0; n];

    // continuity: -D_i m_i
    for (i, mb) in m_b.iter_mut().enumerate() {
        for (a, d) in mb.iter_mut().zip(ops.dt(i, xi_rho)) {
            *a -= d;
        }
    }
    // momentum: -D_j F_ij
    for i in 0..nd {
        let xi_mi = &xi[(1 + i) * n..(2 + i) * n];
        for j in 0..nd {
            let flux_b: Vec<f64> = ops.dt(j, xi_mi).into_iter().map(|v| -v).collect();
            let mj = m(j);
            for k in 0..n {
                m_b[j][k] += b.vel[i][k] * flux_b[k];
                vel_b[i][k] += mj[k] * flux_b[k];
                tau_b[j][i][k] -= flux_b[k];
                if i == j {
                    p_b[k] += flux_b[k];
                }
            }
        }
    }
    // pressure: -D_i H_i with H_i = p u_i - kappa D_i T
    for i in 0..nd {
        let flux_b: Vec<f64> = ops.dt(i, xi_p).into_iter().map(|v| -v).collect();
        for k in 0..n {
            p_b[k] += b.vel[i][k] * flux_b[k];
            vel_b[i][k] += p[k] * flux_b[k];
        }
        let scaled: Vec<f64> = flux_b.iter().map(|f| kappa * f).collect();
        for (a, d) in temp_b.iter_mut().zip(ops.dt(i, &scaled)) {
            *a -= d;
        }
    }
    for k in 0..n {
        p_b[k] -= gm1 * b.div[k] * xi_p[k];
        div_b[k] -= gm1 * p[k] * xi_p[k];
        for i in 0..nd {
            for j in 0..nd {
                tau_b[i][j][k] += gm1 * b.grad[i][j][k] * xi_p[k];
                grad_b[i][j][k] += gm1 * b.tau[i][j][k] * xi_p[k];
            }
        }
    }
    if let Some(s) = src {
        for k in 0..n {
            rho_b[k] += params.r_gas * s[k] * xi_p[k];
        }
    }
    // tau -> grad, div
    for i in 0..nd {
        for j in 0..nd {
            for k in 0..n {
                let t = mu * tau_b[i][j][k];
                grad_b[i][j][k] += t;
                grad_b[j][i][k] += t;
                if i == j {
                    div_b[k] -= (2.0 / 3.0) * t;
                }
            }
        }
    }
    for (i, gb) in grad_b.iter_mut().enumerate() {
        for (g, d) in gb[i].iter_mut().zip(&div_b) {
            *g += d;
        }
    }
    // grad -> velocity
    for i in 0..nd {
        for j in 0..nd {
            for (a, d) in vel_b[i].iter_mut().zip(ops.dt(j, &grad_b[i][j])) {
                *a += d;
            }
        }
    }
    // temperature and velocity -> conservative variables
    for k in 0..n {
        p_b[k] += cfac * temp_b[k] / rho[k];
        rho_b[k] -= b.temp[k] * temp_b[k] / rho[k];
        for i in 0..nd {
            m_b[i][k] += vel_b[i][k] / rho[k];
            rho_b[k] -= b.vel[i][k] * vel_b[i][k] / rho[k];
        }
    }
    out[..n].copy_from_slice(&rho_b);
    for i in 0..nd {
        out[(1 + i) * n..(2 + i) * n].copy_from_slice(&m_b[i]);
    }
    out[(nd + 1) * n..].copy_from_slice(&p_b);
}

/// `(dR/dsrc)^T xi = rho R xi_p` on the full grid.
pub fn rhs_source_adjoint_flat(ops: &NsOperators, params: &FluidParams, u: &[f64], xi: &[f64]) -> Vec<f64> {
    let n = ops.npts();
    let nd = ops.ndim();
    let xi_p = &xi[(nd + 1) * n..];
    (0..n).map(|k| params.r_gas * u[k] * xi_p[k]).collect()
}

fn same_grid(ops: &NsOperators, f: &StateField) -> Result<()> {
    if f.grid != ops.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

pub fn rhs_tangent(
    ops: &NsOperators,
    params: &FluidParams,
    u: &StateField,
    v: &StateField,
    src: Option<&[f64]>,
    src_dot: Option<&[f64]>,
) -> Result<StateField> {
    same_grid(ops, u)?;
    same_grid(ops, v)?;
    for s in [src, src_dot].into_iter().flatten() {
        check_len(ops.npts(), s.len())?;
    }
    let mut out = StateField::zeros(&u.grid);
    rhs_tangent_flat(ops, params, &u.data, src, &v.data, src_dot, &mut out.data);
    Ok(out)
}

pub fn rhs_adjoint(
    ops: &NsOperators,
    params: &FluidParams,
    u: &StateField,
    xi: &StateField,
    src: Option<&[f64]>,
) -> Result<StateField> {
    same_grid(ops, u)?;
    same_grid(ops, xi)?;
    if let Some(s) = src {
        check_len(ops.npts(), s.len())?;
    }
    let mut out = StateField::zeros(&u.grid);
    rhs_adjoint_flat(ops, params, &u.data, src, &xi.data, &mut out.data);
    Ok(out)
}

/// Control sensitivity kernel `(dR/dg)^T xi = rho R s(x,t) xi_p` restricted to
/// the controlled region.
pub fn rhs_control_adjoint(
    ops: &NsOperators,
    params: &FluidParams,
    u: &StateField,
    xi: &StateField,
    source: &ControlSource,
    t: f64,
) -> Result<Vec<f64>> {
    same_grid(ops, u)?;
    same_grid(ops, xi)?;
    let full = rhs_source_adjoint_flat(ops, params, &u.data, &xi.data);
    Ok(source.gather(&full, t))
}

/// Complex-arithmetic clone of the right-hand side.
pub fn rhs_complex(
    ops: &NsOperators,
    params: &FluidParams,
    u: &[CStep],
    src: Option<&[CStep]>,
) -> Result<Vec<CStep>> {
    check_len(ops.state_len(), u.len())?;
    let n = ops.npts();
    let nd = ops.ndim();
    for (name, c) in [("rho", 0), ("p", nd + 1)] {
        if let Some((i, v)) = u[c * n..(c + 1) * n].iter().enumerate().find(|(_, v)| !(v.re > 0.0)) {
            return Err(Error::InvalidState {
                component: name,
                index: i,
                value: v.re,
            });
        }
    }
    let mut out = vec![CStep::default(); u.len()];
    rhs_generic(ops, params, u, src, &mut out);
    Ok(out)
}
