//! The Navier-Stokes semi-discretization as a [`DynamicalSystem`].

use crate::error::{Error, Result};
use crate::grid_field::{FluidParams, Grid, SnapshotHeader};
use crate::ns_linearized::{rhs_adjoint_flat, rhs_source_adjoint_flat, rhs_tangent_flat};
use crate::ns_rhs::{check_state, rhs_generic, ControlSource, NsOperators};
use crate::scalar::{CStep, Scalar};
use crate::timeloop::{ComplexDynamics, DynamicalSystem};

/// Steady body force in the momentum equations, linear drag `-drag m` on
/// the momentum and Newtonian relaxation `-cooling (p - p_ref)` of the
/// pressure, for statistically stationary runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    /// Force per unit volume, one field per axis.
    pub body: Vec<Vec<f64>>,
    pub drag: f64,
    pub cooling: f64,
    pub p_ref: f64,
}

#[derive(Clone, Debug)]
pub struct NsSystem {
    pub ops: NsOperators,
    pub params: FluidParams,
    /// Heat-source control; the control vector lives on its region.
    pub source: Option<ControlSource>,
    pub forcing: Option<Forcing>,
}

impl NsSystem {
    pub fn new(ops: NsOperators, params: FluidParams, source: Option<ControlSource>) -> Result<Self> {
        params.validate()?;
        if let Some(s) = &source {
            if s.points.iter().any(|&p| p >= ops.npts()) {
                return Err(Error::GridMismatch);
            }
        }
        Ok(Self {
            ops,
            params,
            source,
            forcing: None,
        })
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Result<Self> {
        if forcing.body.len() != self.ops.ndim() || forcing.body.iter().any(|f| f.len() != self.ops.npts()) {
            return Err(Error::Validation("body force does not match the grid".into()));
        }
        if !(forcing.cooling >= 0.0 && forcing.drag >= 0.0) {
            return Err(Error::Validation("drag and cooling rates must be non-negative".into()));
        }
        self.forcing = Some(forcing);
        Ok(self)
    }

    fn add_forcing<T: Scalar>(&self, u: &[T], out: &mut [T]) {
        let Some(f) = &self.forcing else { return };
        let n = self.ops.npts();
        for (i, body) in f.body.iter().enumerate() {
            for (o, &b) in out[(1 + i) * n..(2 + i) * n].iter_mut().zip(body) {
                *o += T::from_f64(b);
            }
        }
        self.add_relaxation(u, out, f.p_ref);
    }

    /// `out_m -= drag v_m` and `out_p -= cooling (v_p - shift)`. The map is
    /// diagonal, so it serves the state, the tangent and the adjoint alike.
    fn add_relaxation<T: Scalar>(&self, v: &[T], out: &mut [T], shift: f64) {
        let Some(f) = &self.forcing else { return };
        let n = self.ops.npts();
        let off = (self.ops.ndim() + 1) * n;
        if f.drag != 0.0 {
            for (o, &m) in out[n..off].iter_mut().zip(&v[n..off]) {
                *o -= m * f.drag;
            }
        }
        if f.cooling != 0.0 {
            for (o, &p) in out[off..].iter_mut().zip(&v[off..]) {
                *o -= (p - T::from_f64(shift)) * f.cooling;
            }
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.ops.grid
    }

    fn src(&self, g: Option<&[f64]>, t: f64) -> Option<Vec<f64>> {
        match (&self.source, g) {
            (Some(s), Some(g)) => Some(s.embed(g, t)),
            _ => None,
        }
    }
}

impl DynamicalSystem for NsSystem {
    fn state_len(&self) -> usize {
        self.ops.state_len()
    }

    fn control_len(&self) -> usize {
        self.source.as_ref().map_or(0, |s| s.region_len())
    }

    fn snapshot_header(&self) -> SnapshotHeader {
        SnapshotHeader {
            extents: self.ops.grid.n.clone(),
            ncomp: self.ops.ndim() + 2,
        }
    }

    fn rhs(&self, u: &[f64], g: Option<&[f64]>, t: f64, out: &mut [f64]) {
        let src = self.src(g, t);
        rhs_generic(&self.ops, &self.params, u, src.as_deref(), out);
        self.add_forcing(u, out);
    }

    fn rhs_tangent(&self, u: &[f64], g: Option<&[f64]>, t: f64, v: &[f64], g_dot: Option<&[f64]>, out: &mut [f64]) {
        let src = self.src(g, t);
        let src_dot = self.src(g_dot, t);
        rhs_tangent_flat(&self.ops, &self.params, u, src.as_deref(), v, src_dot.as_deref(), out);
        self.add_relaxation(v, out, 0.0);
    }

    fn rhs_adjoint(&self, u: &[f64], g: Option<&[f64]>, t: f64, xi: &[f64], out: &mut [f64]) {
        let src = self.src(g, t);
        rhs_adjoint_flat(&self.ops, &self.params, u, src.as_deref(), xi, out);
        self.add_relaxation(xi, out, 0.0);
    }

    fn rhs_control_adjoint(&self, u: &[f64], _g: Option<&[f64]>, t: f64, xi: &[f64], out: &mut [f64]) {
        match &self.source {
            Some(s) => {
                let full = rhs_source_adjoint_flat(&self.ops, &self.params, u, xi);
                out.copy_from_slice(&s.gather(&full, t));
            }
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn has_filter(&self) -> bool {
        self.ops.filter.is_some()
    }

    fn filter(&self, u: &mut [f64]) {
        self.ops.filter_state(u);
    }

    fn filter_transpose(&self, u: &mut [f64]) {
        self.ops.filter_state_transpose(u);
    }

    fn check_state(&self, u: &[f64]) -> Result<()> {
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state entry {i}")));
        }
        check_state(&self.ops, u)
    }
}

impl ComplexDynamics for NsSystem {
    fn rhs_complex(&self, u: &[CStep], g: Option<&[CStep]>, t: f64, out: &mut [CStep]) {
        let src = match (&self.source, g) {
            (Some(s), Some(g)) => Some(s.embed(g, t)),
            _ => None,
        };
        rhs_generic(&self.ops, &self.params, u, src.as_deref(), out);
        self.add_forcing(u, out);
    }

    fn filter_complex(&self, u: &mut [CStep]) {
        self.ops.filter_state(u);
    }
}
