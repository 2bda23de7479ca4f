use crate::error::{Error, Result};
use crate::grid_field::SnapshotHeader;
use crate::scalar::{CStep, Scalar};
use crate::timeloop::{ComplexDynamics, DynamicalSystem};

/// Lorenz system with an additive forcing `g` on one component.
#[derive(Clone, Debug, PartialEq)]
pub struct LorenzSystem {
    pub sigma: f64,
    pub rho_param: f64,
    pub beta: f64,
    pub forced: usize,
}

impl Default for LorenzSystem {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho_param: 28.0,
            beta: 8.0 / 3.0,
            forced: 0,
        }
    }
}

impl LorenzSystem {
    pub fn new(sigma: f64, rho_param: f64, beta: f64, forced: usize) -> Result<Self> {
        if forced > 2 {
            return Err(Error::Validation(format!("forced component {forced} out of range")));
        }
        Ok(Self {
            sigma,
            rho_param,
            beta,
            forced,
        })
    }

    fn eval<T: Scalar>(&self, u: &[T], g: Option<&[T]>, out: &mut [T]) {
        let (x, y, z) = (u[0], u[1], u[2]);
        out[0] = (y - x) * self.sigma;
        out[1] = x * (T::from_f64(self.rho_param) - z) - y;
        out[2] = x * y - z * self.beta;
        if let Some(g) = g {
            out[self.forced] += g[0];
        }
    }

    /// Jacobian `dR/du` at `u`.
    pub fn jacobian(&self, u: &[f64]) -> [[f64; 3]; 3] {
        let (x, y, z) = (u[0], u[1], u[2]);
        [
            [-self.sigma, self.sigma, 0.0],
            [self.rho_param - z, -1.0, -x],
            [y, x, -self.beta],
        ]
    }
}

impl DynamicalSystem for LorenzSystem {
    fn state_len(&self) -> usize {
        3
    }

    fn control_len(&self) -> usize {
        1
    }

    fn snapshot_header(&self) -> SnapshotHeader {
        SnapshotHeader {
            extents: vec![3],
            ncomp: 1,
        }
    }

    fn rhs(&self, u: &[f64], g: Option<&[f64]>, _t: f64, out: &mut [f64]) {
        self.eval(u, g, out);
    }

    fn rhs_tangent(&self, u: &[f64], _g: Option<&[f64]>, _t: f64, v: &[f64], g_dot: Option<&[f64]>, out: &mut [f64]) {
        let j = self.jacobian(u);
        for r in 0..3 {
            out[r] = j[r][0] * v[0] + j[r][1] * v[1] + j[r][2] * v[2];
        }
        if let Some(gd) = g_dot {
            out[self.forced] += gd[0];
        }
    }

    fn rhs_adjoint(&self, u: &[f64], _g: Option<&[f64]>, _t: f64, xi: &[f64], out: &mut [f64]) {
        let j = self.jacobian(u);
        for c in 0..3 {
            out[c] = j[0][c] * xi[0] + j[1][c] * xi[1] + j[2][c] * xi[2];
        }
    }

    fn rhs_control_adjoint(&self, _u: &[f64], _g: Option<&[f64]>, _t: f64, xi: &[f64], out: &mut [f64]) {
        out[0] = xi[self.forced];
    }
}

impl ComplexDynamics for LorenzSystem {
    fn rhs_complex(&self, u: &[CStep], g: Option<&[CStep]>, _t: f64, out: &mut [CStep]) {
        self.eval(u, g, out);
    }
}
