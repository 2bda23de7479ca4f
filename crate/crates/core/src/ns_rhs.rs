//! Compressible Navier-Stokes right-hand side on a periodic grid.
//!
//! Variables are density, momentum and pressure. With `u_i = m_i / rho`,
//! `T = gamma Ma^2 p / rho`, `G_ij = d u_i / d x_j` and
//! `tau_ij = mu (G_ij + G_ji - 2/3 delta_ij div u)`:
//!
//! ```text
//! d rho / dt = -d_i m_i
//! d m_i / dt = -d_j (m_j u_i + delta_ij p - tau_ji)
//! d p   / dt = -d_i (p u_i - kappa d_i T) - (gamma-1) p div u
//!              + (gamma-1) tau_ij G_ij + rho R src
//! ```
//!
//! with `kappa = lambda (gamma - 1)`. Convection is in divergence form; the
//! explicit filter takes care of de-aliasing.

use crate::error::{check_len, Error, Result};
use crate::grid_field::{check_positive, FluidParams, Grid, StateField};
use crate::scalar::Scalar;
use crate::stencil_ops::{build_derivative, build_filter, DerivativeVariant, StencilOperator};

/// Derivative and filter operators for every axis of a grid.
#[derive(Clone, Debug)]
pub struct NsOperators {
    pub grid: Grid,
    pub deriv: Vec<StencilOperator>,
    pub filter: Option<Vec<StencilOperator>>,
}

impl NsOperators {
    pub fn new(grid: &Grid, variant: &DerivativeVariant, filter_strength: Option<f64>) -> Result<Self> {
        let deriv = (0..grid.ndim())
            .map(|axis| build_derivative(6, axis, grid, variant))
            .collect::<Result<Vec<_>>>()?;
        let filter = match filter_strength {
            Some(s) => Some(
                (0..grid.ndim())
                    .map(|axis| build_filter(10, axis, grid, s))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Self {
            grid: grid.clone(),
            deriv,
            filter,
        })
    }

    pub fn npts(&self) -> usize {
        self.grid.len()
    }

    pub fn ndim(&self) -> usize {
        self.grid.ndim()
    }

    pub fn state_len(&self) -> usize {
        self.npts() * (self.ndim() + 2)
    }

    pub(crate) fn d<T: Scalar>(&self, axis: usize, a: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); a.len()];
        self.deriv[axis].apply_unchecked(a, &mut out);
        out
    }

    pub(crate) fn dt<T: Scalar>(&self, axis: usize, a: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); a.len()];
        self.deriv[axis].apply_transpose_unchecked(a, &mut out);
        out
    }

    /// Applies the tensor-product filter to every component in place.
    pub fn filter_state<T: Scalar>(&self, u: &mut [T]) {
        let Some(filters) = &self.filter else { return };
        let n = self.npts();
        let mut tmp = vec![T::zero(); n];
        for comp in u.chunks_mut(n) {
            for f in filters {
                f.apply_unchecked(comp, &mut tmp);
                comp.copy_from_slice(&tmp);
            }
        }
    }

    /// Transpose of [`NsOperators::filter_state`]: axes in reverse order.
    pub fn filter_state_transpose(&self, u: &mut [f64]) {
        let Some(filters) = &self.filter else { return };
        let n = self.npts();
        let mut tmp = vec![0.0; n];
        for comp in u.chunks_mut(n) {
            for f in filters.iter().rev() {
                f.apply_transpose_unchecked(comp, &mut tmp);
                comp.copy_from_slice(&tmp);
            }
        }
    }
}

/// Pointwise derived quantities of a state, shared by the linearizations.
pub(crate) struct Base<T> {
    pub vel: Vec<Vec<T>>,
    pub temp: Vec<T>,
    /// `grad[i][j] = d u_i / d x_j`
    pub grad: Vec<Vec<Vec<T>>>,
    pub div: Vec<T>,
    pub tau: Vec<Vec<Vec<T>>>,
}

pub(crate) fn base_quantities<T: Scalar>(ops: &NsOperators, params: &FluidParams, u: &[T]) -> Base<T> {
    let n = ops.npts();
    let nd = ops.ndim();
    let rho = &u[..n];
    let p = &u[(nd + 1) * n..(nd + 2) * n];
    let cfac = params.temperature_factor();
    let mu = params.mu();

    let vel: Vec<Vec<T>> = (0..nd)
        .map(|i| {
            let m = &u[(1 + i) * n..(2 + i) * n];
            m.iter().zip(rho).map(|(&mi, &r)| mi / r).collect()
        })
        .collect();
    let temp: Vec<T> = p.iter().zip(rho).map(|(&pi, &r)| (pi * cfac) / r).collect();
    let grad: Vec<Vec<Vec<T>>> = (0..nd)
        .map(|i| (0..nd).map(|j| ops.d(j, &vel[i])).collect())
        .collect();
    let mut div = vec![T::zero(); n];
    for (i, g) in grad.iter().enumerate() {
        for (dv, &gv) in div.iter_mut().zip(&g[i]) {
            *dv += gv;
        }
    }
    let tau: Vec<Vec<Vec<T>>> = (0..nd)
        .map(|i| {
            (0..nd)
                .map(|j| {
                    (0..n)
                        .map(|k| {
                            let mut s = grad[i][j][k] + grad[j][i][k];
                            if i == j {
                                s -= div[k] * (2.0 / 3.0);
                            }
                            s * mu
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Base {
        vel,
        temp,
        grad,
        div,
        tau,
    }
}

/// Right-hand side for any scalar type; `src` is the pressure source already
/// multiplied by the window (`s(x,t) g`).
pub fn rhs_generic<T: Scalar>(
    ops: &NsOperators,
    params: &FluidParams,
    u: &[T],
    src: Option<&[T]>,
    out: &mut [T],
) {
    let n = ops.npts();
    let nd = ops.ndim();
    let gm1 = params.gamma - 1.0;
    let kappa = params.lambda() * gm1;
    let rho = &u[..n];
    let p = &u[(nd + 1) * n..(nd + 2) * n];
    let b = base_quantities(ops, params, u);

    // continuity
    {
        let o = &mut out[..n];
        o.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..nd {
            let dm = ops.d(i, &u[(1 + i) * n..(2 + i) * n]);
            for (ov, dv) in o.iter_mut().zip(dm) {
                *ov -= dv;
            }
        }
    }
    // momentum
    for i in 0..nd {
        let mut acc = vec![T::zero(); n];
        for j in 0..nd {
            let mj = &u[(1 + j) * n..(2 + j) * n];
            let flux: Vec<T> = (0..n)
                .map(|k| {
                    let mut f = mj[k] * b.vel[i][k] - b.tau[j][i][k];
                    if i == j {
                        f += p[k];
                    }
                    f
                })
                .collect();
            let df = ops.d(j, &flux);
            for (a, dv) in acc.iter_mut().zip(df) {
                *a -= dv;
            }
        }
        out[(1 + i) * n..(2 + i) * n].copy_from_slice(&acc);
    }
    // pressure
    let mut acc = vec![T::zero(); n];
    for i in 0..nd {
        let dtemp = ops.d(i, &b.temp);
        let flux: Vec<T> = (0..n).map(|k| p[k] * b.vel[i][k] - dtemp[k] * kappa).collect();
        let df = ops.d(i, &flux);
        for (a, dv) in acc.iter_mut().zip(df) {
            *a -= dv;
        }
    }
    for k in 0..n {
        let mut diss = T::zero();
        for i in 0..nd {
            for j in 0..nd {
                diss += b.tau[i][j][k] * b.grad[i][j][k];
            }
        }
        acc[k] = acc[k] - (p[k] * b.div[k]) * gm1 + diss * gm1;
    }
    if let Some(s) = src {
        for k in 0..n {
            acc[k] += (rho[k] * s[k]) * params.r_gas;
        }
    }
    out[(nd + 1) * n..(nd + 2) * n].copy_from_slice(&acc);
}

/// Checked right-hand side: the state must be physical.
pub fn rhs(
    ops: &NsOperators,
    params: &FluidParams,
    u: &StateField,
    src: Option<&[f64]>,
) -> Result<StateField> {
    if u.grid != ops.grid {
        return Err(Error::GridMismatch);
    }
    u.check_valid()?;
    if let Some(s) = src {
        check_len(ops.npts(), s.len())?;
    }
    let mut out = StateField::zeros(&u.grid);
    rhs_generic(ops, params, &u.data, src, &mut out.data);
    Ok(out)
}

pub(crate) fn check_state(ops: &NsOperators, u: &[f64]) -> Result<()> {
    check_positive(ops.npts(), ops.ndim() + 2, u)
}

/// Smooth top-hat `1/2 (erf((k - k_start - 2 delta)/delta) - erf((k - k_end + 2 delta)/delta))`.
pub fn window_value(k: f64, k_start: f64, k_end: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) || !(k_end - k_start > 4.0 * delta) {
        return Err(Error::Validation(format!(
            "window region [{k_start}, {k_end}] too narrow for width {delta}"
        )));
    }
    Ok(window_unchecked(k, k_start, k_end, delta))
}

fn window_unchecked(k: f64, k_start: f64, k_end: f64, delta: f64) -> f64 {
    0.5 * (libm::erf((k - k_start - 2.0 * delta) / delta) - libm::erf((k - k_end + 2.0 * delta) / delta))
}

/// Controlled box (inclusive grid-index bounds per axis) and control interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSourceConfig {
    pub region_start: Vec<usize>,
    pub region_end: Vec<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

/// Heat-source control term: embeds a region control vector into the grid
/// with the separable space-time window.
#[derive(Clone, Debug)]
pub struct ControlSource {
    pub cfg: ControlSourceConfig,
    pub region_shape: Vec<usize>,
    /// Flat grid index of every region point (axis 0 fastest).
    pub points: Vec<usize>,
    /// Spatial window at every region point.
    pub spatial: Vec<f64>,
    npts: usize,
}

impl ControlSource {
    pub fn new(grid: &Grid, cfg: ControlSourceConfig) -> Result<Self> {
        let nd = grid.ndim();
        if cfg.region_start.len() != nd || cfg.region_end.len() != nd {
            return Err(Error::Validation("control region dimension differs from grid".into()));
        }
        if !(cfg.t_start < cfg.t_end) || !(cfg.dt > 0.0) {
            return Err(Error::Validation(format!(
                "control interval [{}, {}] with dt {} is invalid",
                cfg.t_start, cfg.t_end, cfg.dt
            )));
        }
        // temporal window validity
        window_value(0.0, cfg.t_start, cfg.t_end, 5.0 * cfg.dt)?;
        let mut factors = Vec::with_capacity(nd);
        let mut shape = Vec::with_capacity(nd);
        for d in 0..nd {
            let (s, e) = (cfg.region_start[d], cfg.region_end[d]);
            if s == 0 || e + 1 >= grid.n[d] || s >= e {
                return Err(Error::Validation(format!(
                    "axis {d}: control region [{s}, {e}] must lie strictly inside the grid"
                )));
            }
            let delta = 2.0 * grid.dx[d];
            let (ks, ke) = (grid.coord(d, s), grid.coord(d, e));
            let w = (s..=e)
                .map(|i| window_value(grid.coord(d, i), ks, ke, delta))
                .collect::<Result<Vec<_>>>()?;
            factors.push(w);
            shape.push(e - s + 1);
        }
        let total: usize = shape.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut spatial = Vec::with_capacity(total);
        let mut multi = vec![0usize; nd];
        for r in 0..total {
            let mut rem = r;
            let mut w = 1.0;
            for d in 0..nd {
                let i = rem % shape[d];
                rem /= shape[d];
                multi[d] = cfg.region_start[d] + i;
                w *= factors[d][i];
            }
            points.push(grid.ravel(&multi));
            spatial.push(w);
        }
        Ok(Self {
            cfg,
            region_shape: shape,
            points,
            spatial,
            npts: grid.len(),
        })
    }

    pub fn region_len(&self) -> usize {
        self.points.len()
    }

    pub fn temporal(&self, t: f64) -> f64 {
        window_unchecked(t, self.cfg.t_start, self.cfg.t_end, 5.0 * self.cfg.dt)
    }

    /// Full-grid window `s(x, t)`; zero outside the controlled box.
    pub fn control_window(&self, t: f64) -> Vec<f64> {
        let wt = self.temporal(t);
        let mut out = vec![0.0; self.npts];
        for (&idx, &ws) in self.points.iter().zip(&self.spatial) {
            out[idx] = ws * wt;
        }
        out
    }

    /// Pressure source `s(x,t) g(x)` on the full grid.
    pub fn embed<T: Scalar>(&self, g: &[T], t: f64) -> Vec<T> {
        let wt = self.temporal(t);
        let mut out = vec![T::zero(); self.npts];
        for ((&idx, &ws), &gv) in self.points.iter().zip(&self.spatial).zip(g) {
            out[idx] = gv * (ws * wt);
        }
        out
    }

    /// Transpose of [`ControlSource::embed`].
    pub fn gather(&self, field: &[f64], t: f64) -> Vec<f64> {
        let wt = self.temporal(t);
        self.points
            .iter()
            .zip(&self.spatial)
            .map(|(&idx, &ws)| field[idx] * (ws * wt))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quiescent(grid: &Grid, params: &FluidParams) -> StateField {
        let n = grid.len();
        let vel = vec![vec![0.0; n]; grid.ndim()];
        StateField::from_primitive(grid, &vec![1.0; n], &vel, &vec![params.reference_pressure(); n]).unwrap()
    }

    #[test]
    fn quiescent_state_is_steady() {
        let grid = Grid::new(&[16, 12], &[1.0, 1.0]).unwrap();
        let params = FluidParams::default();
        let ops = NsOperators::new(&grid, &DerivativeVariant::Central6, None).unwrap();
        let out = rhs(&ops, &params, &quiescent(&grid, &params), None).unwrap();
        assert!(out.data.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn acoustic_pulse_matches_linear_acoustics() {
        // inviscid, small amplitude: rho_t = -m_x, m_x_t = -p_x, p_t = -gamma p0 u_x
        let n = 128;
        let grid = Grid::new(&[n], &[1.0]).unwrap();
        let mut params = FluidParams::default();
        params.mu_override = Some(0.0);
        let ops = NsOperators::new(&grid, &DerivativeVariant::Central6, None).unwrap();
        let p0 = params.reference_pressure();
        let c0 = (params.gamma * p0).sqrt();
        let eps = 1e-6;
        let shape: Vec<f64> = (0..n).map(|i| (2.0 * PI * grid.coord(0, i)).sin()).collect();
        let rho: Vec<f64> = shape.iter().map(|s| 1.0 + eps * s).collect();
        let vel: Vec<f64> = shape.iter().map(|s| eps * c0 * s).collect();
        let p: Vec<f64> = shape.iter().map(|s| p0 + eps * c0 * c0 * s).collect();
        let u = StateField::from_primitive(&grid, &rho, &[vel.clone()], &p).unwrap();
        let out = rhs(&ops, &params, &u, None).unwrap();
        let ds = ops.d(0, &shape);
        for k in 0..n {
            // right-running wave: q_t = -c0 q_x for every linear variable
            assert!((out.rho()[k] + eps * c0 * ds[k]).abs() < 1e-10);
            assert!((out.p()[k] + eps * c0.powi(3) * ds[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn window_values() {
        let v = window_value(0.5, 0.0, 1.0, 0.01).unwrap();
        assert!(v > 0.999);
        let v = window_value(0.02, 0.0, 1.0, 0.01).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(window_value(3.0, 0.0, 1.0, 0.01).unwrap().abs() < 1e-6);
        assert!(window_value(0.5, 0.0, 0.03, 0.01).is_err());
    }

    #[test]
    fn control_window_is_separable() {
        let grid = Grid::new(&[32, 32], &[2.0, 2.0]).unwrap();
        let cfg = ControlSourceConfig {
            region_start: vec![4, 6],
            region_end: vec![26, 24],
            t_start: 0.0,
            t_end: 1.0,
            dt: 0.01,
        };
        let src = ControlSource::new(&grid, cfg.clone()).unwrap();
        let t = 0.37;
        let w = src.control_window(t);
        for &(i, j) in &[(10usize, 10usize), (5, 20), (15, 15), (26, 6)] {
            let wx = window_value(grid.coord(0, i), grid.coord(0, 4), grid.coord(0, 26), 2.0 * grid.dx[0]).unwrap();
            let wy = window_value(grid.coord(1, j), grid.coord(1, 6), grid.coord(1, 24), 2.0 * grid.dx[1]).unwrap();
            let wt = window_value(t, 0.0, 1.0, 0.05).unwrap();
            assert!((w[grid.ravel(&[i, j])] - wx * wy * wt).abs() < 1e-15);
        }
        assert!(src.control_window(3.0).iter().all(|v| v.abs() < 1e-6));
        assert!(w[grid.ravel(&[15, 15])] > 0.99);
        assert_eq!(w[grid.ravel(&[2, 15])], 0.0);
    }

    #[test]
    fn region_must_be_inside() {
        let grid = Grid::new(&[16], &[1.0]).unwrap();
        let cfg = ControlSourceConfig {
            region_start: vec![0],
            region_end: vec![12],
            t_start: 0.0,
            t_end: 1.0,
            dt: 0.01,
        };
        assert!(ControlSource::new(&grid, cfg).is_err());
    }

    #[test]
    fn invalid_state_is_reported() {
        let grid = Grid::new(&[16], &[1.0]).unwrap();
        let params = FluidParams::default();
        let ops = NsOperators::new(&grid, &DerivativeVariant::Central6, None).unwrap();
        let mut u = quiescent(&grid, &params);
        u.rho_mut()[3] = -1.0;
        assert!(matches!(
            rhs(&ops, &params, &u, None),
            Err(Error::InvalidState { component: "rho", index: 3, .. })
        ));
    }
}
