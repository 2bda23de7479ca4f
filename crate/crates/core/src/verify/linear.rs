use crate::error::{Error, Result};
use crate::grid_field::SnapshotHeader;
use crate::scalar::{CStep, Scalar};
use crate::timeloop::{ComplexDynamics, DynamicalSystem};

/// `du/dt = A u + B g` with dense row-major `A` (n x n) and `B` (n x m).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearSystem {
    pub fn new(n: usize, m: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if n == 0 || a.len() != n * n || b.len() != n * m {
            return Err(Error::Validation(format!("linear system matrices do not match n={n}, m={m}")));
        }
        Ok(Self { n, m, a, b })
    }

    /// Diagonal dynamics with one control per mode.
    pub fn diagonal(rates: &[f64]) -> Self {
        let n = rates.len();
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for (i, &r) in rates.iter().enumerate() {
            a[i * n + i] = r;
            b[i * n + i] = 1.0;
        }
        Self { n, m: n, a, b }
    }

    fn apply<T: Scalar>(&self, u: &[T], g: Option<&[T]>, out: &mut [T]) {
        for r in 0..self.n {
            let mut acc = T::zero();
            for c in 0..self.n {
                acc += u[c] * self.a[r * self.n + c];
            }
            if let Some(g) = g {
                for c in 0..self.m {
                    acc += g[c] * self.b[r * self.m + c];
                }
            }
            out[r] = acc;
        }
    }
}

impl DynamicalSystem for LinearSystem {
    fn state_len(&self) -> usize {
        self.n
    }

    fn control_len(&self) -> usize {
        self.m
    }

    fn snapshot_header(&self) -> SnapshotHeader {
        SnapshotHeader {
            extents: vec![self.n],
            ncomp: 1,
        }
    }

    fn rhs(&self, u: &[f64], g: Option<&[f64]>, _t: f64, out: &mut [f64]) {
        self.apply(u, g, out);
    }

    fn rhs_tangent(&self, _u: &[f64], _g: Option<&[f64]>, _t: f64, v: &[f64], g_dot: Option<&[f64]>, out: &mut [f64]) {
        self.apply(v, g_dot, out);
    }

    fn rhs_adjoint(&self, _u: &[f64], _g: Option<&[f64]>, _t: f64, xi: &[f64], out: &mut [f64]) {
        for c in 0..self.n {
            out[c] = (0..self.n).map(|r| self.a[r * self.n + c] * xi[r]).sum();
        }
    }

    fn rhs_control_adjoint(&self, _u: &[f64], _g: Option<&[f64]>, _t: f64, xi: &[f64], out: &mut [f64]) {
        for c in 0..self.m {
            out[c] = (0..self.n).map(|r| self.b[r * self.m + c] * xi[r]).sum();
        }
    }
}

impl ComplexDynamics for LinearSystem {
    fn rhs_complex(&self, u: &[CStep], g: Option<&[CStep]>, _t: f64, out: &mut [CStep]) {
        self.apply(u, g, out);
    }
}
