//! Initial conditions for the periodic flow testbeds.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid_field::{FluidParams, Grid, StateField};

/// Periodic plane jet `u_x = 1/2 [tanh((y - y1)/2theta) - tanh((y - y2)/2theta)]`
/// of unit width centred in the domain, with seeded shear-layer noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneJet {
    pub momentum_thickness: f64,
    pub noise: f64,
    pub modes: usize,
    pub seed: u64,
}

impl Default for PlaneJet {
    fn default() -> Self {
        Self {
            momentum_thickness: 0.1,
            noise: 0.05,
            modes: 4,
            seed: 1,
        }
    }
}

impl PlaneJet {
    pub fn build(&self, grid: &Grid, params: &FluidParams) -> Result<StateField> {
        if grid.ndim() != 2 {
            return Err(Error::Validation("plane jet needs a 2-D grid".into()));
        }
        if !(self.momentum_thickness > 0.0) {
            return Err(Error::Validation("momentum thickness must be positive".into()));
        }
        let (lx, ly) = (grid.length[0], grid.length[1]);
        let (y1, y2) = (0.5 * ly - 0.5, 0.5 * ly + 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // (amplitude, phase) per streamwise mode and shear layer
        let modes: Vec<[(f64, f64); 2]> = (0..self.modes)
            .map(|_| {
                [
                    (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)),
                    (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)),
                ]
            })
            .collect();
        let th2 = 2.0 * self.momentum_thickness;
        let sig = 4.0 * self.momentum_thickness;
        let n = grid.len();
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        for k in 0..n {
            let m = grid.unravel(k);
            let (x, y) = (grid.coord(0, m[0]), grid.coord(1, m[1]));
            ux[k] = 0.5 * (((y - y1) / th2).tanh() - ((y - y2) / th2).tanh());
            let env = [(-((y - y1) / sig).powi(2)).exp(), (-((y - y2) / sig).powi(2)).exp()];
            let mut v = 0.0;
            for (j, layer) in modes.iter().enumerate() {
                let kx = 2.0 * PI * (j + 1) as f64 / lx;
                for (e, (a, ph)) in env.iter().zip(layer) {
                    v += e * a * (kx * x + ph).sin();
                }
            }
            uy[k] = self.noise * v;
        }
        let rho = vec![1.0; n];
        let p = vec![params.reference_pressure(); n];
        StateField::from_primitive(grid, &rho, &[ux, uy], &p)
    }
}

/// Forced shear flow `f_x = F sin(k y)` on a square periodic box, started
/// from a reduced laminar profile with seeded noise.
#[derive(Clone, Debug, PartialEq)]
pub struct KolmogorovFlow {
    pub wavenumber: usize,
    pub forcing: f64,
    pub initial_amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for KolmogorovFlow {
    fn default() -> Self {
        Self {
            wavenumber: 4,
            forcing: 0.05,
            initial_amplitude: 0.2,
            noise: 0.02,
            seed: 1,
        }
    }
}

impl KolmogorovFlow {
    fn ky(&self, grid: &Grid) -> f64 {
        2.0 * PI * self.wavenumber as f64 / grid.length[1]
    }

    /// Body force per axis.
    pub fn body_force(&self, grid: &Grid) -> Result<Vec<Vec<f64>>> {
        if grid.ndim() != 2 {
            return Err(Error::Validation("forced shear flow needs a 2-D grid".into()));
        }
        let ky = self.ky(grid);
        let fx = (0..grid.len())
            .map(|k| self.forcing * (ky * grid.coord(1, grid.unravel(k)[1])).sin())
            .collect();
        Ok(vec![fx, vec![0.0; grid.len()]])
    }

    pub fn build(&self, grid: &Grid, params: &FluidParams) -> Result<StateField> {
        if grid.ndim() != 2 {
            return Err(Error::Validation("forced shear flow needs a 2-D grid".into()));
        }
        let ky = self.ky(grid);
        let (lx, ly) = (grid.length[0], grid.length[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // random low-mode streamfunction perturbation
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(1..=3) as f64,
                    rng.gen_range(1..=3) as f64,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let n = grid.len();
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        for k in 0..n {
            let m = grid.unravel(k);
            let (x, y) = (grid.coord(0, m[0]), grid.coord(1, m[1]));
            ux[k] = self.initial_amplitude * (ky * y).sin();
            for &(a, b, amp, ph) in &modes {
                let (kx, kyy) = (2.0 * PI * a / lx, 2.0 * PI * b / ly);
                let arg = kx * x + kyy * y + ph;
                // u = d psi/dy, v = -d psi/dx with psi = amp sin(arg)
                ux[k] += self.noise * amp * kyy * arg.cos();
                uy[k] -= self.noise * amp * kx * arg.cos();
            }
        }
        let rho = vec![1.0; n];
        let p = vec![params.reference_pressure(); n];
        StateField::from_primitive(grid, &rho, &[ux, uy], &p)
    }
}

/// Gaussian pressure pulse on a quiescent background, any dimension.
pub fn acoustic_pulse(grid: &Grid, params: &FluidParams, amplitude: f64, width: f64) -> Result<StateField> {
    let n = grid.len();
    let p0 = params.reference_pressure();
    let mut p = vec![p0; n];
    let mut rho = vec![1.0; n];
    for k in 0..n {
        let m = grid.unravel(k);
        let r2: f64 = (0..grid.ndim())
            .map(|d| (grid.coord(d, m[d]) - 0.5 * grid.length[d]).powi(2))
            .sum();
        let bump = amplitude * (-r2 / (width * width)).exp();
        p[k] = p0 * (1.0 + bump);
        rho[k] = 1.0 + bump / params.gamma;
    }
    let vel = vec![vec![0.0; n]; grid.ndim()];
    StateField::from_primitive(grid, &rho, &vel, &p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_profile_and_seed() {
        let grid = Grid::new(&[16, 32], &[4.0, 4.0]).unwrap();
        let params = FluidParams::default();
        let jet = PlaneJet::default();
        let a = jet.build(&grid, &params).unwrap();
        let b = jet.build(&grid, &params).unwrap();
        assert_eq!(a.data, b.data);
        let c = PlaneJet { seed: 2, ..jet.clone() }.build(&grid, &params).unwrap();
        assert_ne!(a.data, c.data);
        // centreline close to 1, edges close to 0
        let centre = grid.ravel(&[0, 16]);
        let edge = grid.ravel(&[0, 0]);
        assert!((a.m(0)[centre] - 1.0).abs() < 2e-2);
        assert!(a.m(0)[edge].abs() < 1e-3);
        assert!(jet.build(&Grid::new(&[16], &[1.0]).unwrap(), &params).is_err());
    }

    #[test]
    fn pulse_is_valid() {
        let grid = Grid::new(&[32], &[1.0]).unwrap();
        let f = acoustic_pulse(&grid, &FluidParams::default(), 1e-2, 0.05).unwrap();
        f.check_valid().unwrap();
        assert!(f.p()[16] > f.p()[0]);
    }
}
