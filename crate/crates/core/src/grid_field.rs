//! Periodic Cartesian grids, fluid parameters and the flow-state container.
//!
//! Layout: a [`StateField`] stores its components back to back
//! (`rho`, `m_0 .. m_{ndim-1}`, `p`), each component flattened with axis 0
//! varying fastest. All inner products walk this flat order, so summation
//! order is fixed and reproducible.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Smallest extent accepted along any axis.
pub const MIN_EXTENT: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n: Vec<usize>,
    pub length: Vec<f64>,
    pub dx: Vec<f64>,
}

impl Grid {
    pub fn new(n: &[usize], length: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 2 {
            return Err(Error::Validation(format!(
                "grid dimension must be 1 or 2, got {}",
                n.len()
            )));
        }
        if n.len() != length.len() {
            return Err(Error::Validation(
                "extents and lengths differ in dimension".into(),
            ));
        }
        for (axis, (&ni, &li)) in n.iter().zip(length).enumerate() {
            if ni < MIN_EXTENT {
                return Err(Error::Validation(format!(
                    "axis {axis}: extent below stencil minimum ({ni} < {MIN_EXTENT})"
                )));
            }
            if !(li > 0.0) || !li.is_finite() {
                return Err(Error::Validation(format!(
                    "axis {axis}: domain length must be positive, got {li}"
                )));
            }
        }
        let dx = n.iter().zip(length).map(|(&ni, &li)| li / ni as f64).collect();
        Ok(Self {
            n: n.to_vec(),
            length: length.to_vec(),
            dx,
        })
    }

    pub fn ndim(&self) -> usize {
        self.n.len()
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stride of `axis` in the flat point index.
    pub fn stride(&self, axis: usize) -> usize {
        self.n[..axis].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx.iter().product()
    }

    /// Multi-index of a flat point index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ndim());
        for &ni in &self.n {
            out.push(idx % ni);
            idx /= ni;
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for axis in (0..self.ndim()).rev() {
            idx = idx * self.n[axis] + multi[axis];
        }
        idx
    }

    /// Physical coordinate of a point along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.dx[axis]
    }
}

/// Non-dimensional fluid parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidParams {
    pub gamma: f64,
    pub reynolds: f64,
    pub mach: f64,
    pub prandtl: f64,
    pub r_gas: f64,
    /// When set, overrides `1/Re` (e.g. zero for inviscid checks).
    pub mu_override: Option<f64>,
}

impl FluidParams {
    pub fn new(gamma: f64, reynolds: f64, mach: f64, prandtl: f64) -> Result<Self> {
        let p = Self {
            gamma,
            reynolds,
            mach,
            prandtl,
            r_gas: 1.0 / (gamma * mach * mach),
            mu_override: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Validation(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.reynolds > 0.0) {
            return Err(Error::Validation(format!("Re must be positive, got {}", self.reynolds)));
        }
        if !(self.mach > 0.0) {
            return Err(Error::Validation(format!("Ma must be positive, got {}", self.mach)));
        }
        if !(self.prandtl > 0.0) {
            return Err(Error::Validation(format!("Pr must be positive, got {}", self.prandtl)));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.mu_override.unwrap_or(1.0 / self.reynolds)
    }

    /// Heat conductivity `mu / ((gamma - 1) Pr Ma^2)`.
    pub fn lambda(&self) -> f64 {
        self.mu() / ((self.gamma - 1.0) * self.prandtl * self.mach * self.mach)
    }

    /// Factor turning `p / rho` into the temperature: `T = gamma Ma^2 p / rho`.
    pub fn temperature_factor(&self) -> f64 {
        self.gamma * self.mach * self.mach
    }

    /// Pressure of the reference state (`rho = 1`, `T = 1`).
    pub fn reference_pressure(&self) -> f64 {
        1.0 / self.temperature_factor()
    }
}

impl Default for FluidParams {
    fn default() -> Self {
        Self::new(1.4, 2000.0, 0.9, 0.7).expect("default parameters are valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl StateField {
    pub fn ncomp_for(grid: &Grid) -> usize {
        grid.ndim() + 2
    }

    pub fn zeros(grid: &Grid) -> Self {
        let len = grid.len() * Self::ncomp_for(grid);
        Self {
            grid: grid.clone(),
            data: vec![0.0; len],
        }
    }

    pub fn from_data(grid: &Grid, data: Vec<f64>) -> Result<Self> {
        crate::error::check_len(grid.len() * Self::ncomp_for(grid), data.len())?;
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    /// Builds a state from primitive variables, checking positivity.
    pub fn from_primitive(grid: &Grid, rho: &[f64], vel: &[Vec<f64>], p: &[f64]) -> Result<Self> {
        let n = grid.len();
        crate::error::check_len(n, rho.len())?;
        crate::error::check_len(n, p.len())?;
        crate::error::check_len(grid.ndim(), vel.len())?;
        let mut s = Self::zeros(grid);
        s.rho_mut().copy_from_slice(rho);
        for (d, v) in vel.iter().enumerate() {
            crate::error::check_len(n, v.len())?;
            for (m, (&r, &vi)) in s.m_mut(d).iter_mut().zip(rho.iter().zip(v)) {
                *m = r * vi;
            }
        }
        s.p_mut().copy_from_slice(p);
        s.check_valid()?;
        Ok(s)
    }

    pub fn ncomp(&self) -> usize {
        Self::ncomp_for(&self.grid)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn rho(&self) -> &[f64] {
        self.component(0)
    }
    pub fn rho_mut(&mut self) -> &mut [f64] {
        self.component_mut(0)
    }
    pub fn m(&self, axis: usize) -> &[f64] {
        self.component(1 + axis)
    }
    pub fn m_mut(&mut self, axis: usize) -> &mut [f64] {
        self.component_mut(1 + axis)
    }
    pub fn p(&self) -> &[f64] {
        self.component(self.ncomp() - 1)
    }
    pub fn p_mut(&mut self) -> &mut [f64] {
        let c = self.ncomp() - 1;
        self.component_mut(c)
    }

    pub fn check_valid(&self) -> Result<()> {
        check_positive(self.grid.len(), self.ncomp(), &self.data)
    }

    /// Total mass `sum(rho) * cell_volume`.
    pub fn total_mass(&self) -> f64 {
        self.rho().iter().sum::<f64>() * self.grid.cell_volume()
    }
}

/// Positivity check of density and pressure for a flat component-major state.
pub fn check_positive(npts: usize, ncomp: usize, data: &[f64]) -> Result<()> {
    for (name, c) in [("rho", 0), ("p", ncomp - 1)] {
        let comp = &data[c * npts..(c + 1) * npts];
        if let Some((i, &v)) = comp.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::InvalidState {
                component: name,
                index: i,
                value: v,
            });
        }
    }
    Ok(())
}

/// Flat dot product in ascending index order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unweighted Euclidean inner product over all components and points.
pub fn inner_product(a: &StateField, b: &StateField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(dot(&a.data, &b.data))
}

pub fn l2_norm(a: &StateField) -> f64 {
    norm(&a.data)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"AFL1";

/// Header of a binary snapshot record.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub extents: Vec<usize>,
    pub ncomp: usize,
}

impl SnapshotHeader {
    pub fn values(&self) -> usize {
        self.extents.iter().product::<usize>() * self.ncomp
    }

    /// Size in bytes of a record carrying this header.
    pub fn record_bytes(&self) -> usize {
        4 + 4 + 8 * self.extents.len() + 4 + 8 * self.values()
    }
}

/// Writes one snapshot record:
/// `"AFL1"`, `u32 ndim`, `u64 extents[ndim]`, `u32 ncomp`, then
/// `f64 data[ncomp * prod(extents)]` component-major, all little-endian.
pub fn write_snapshot<W: Write>(w: &mut W, header: &SnapshotHeader, data: &[f64]) -> Result<()> {
    crate::error::check_len(header.values(), data.len())?;
    let mut buf = Vec::with_capacity(header.record_bytes());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(header.extents.len() as u32).to_le_bytes());
    for &e in &header.extents {
        buf.extend_from_slice(&(e as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(header.ncomp as u32).to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Storage(format!("bad snapshot magic {magic:?}")));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Storage(format!("implausible snapshot ndim {ndim}")));
    }
    let mut extents = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        extents.push(read_u64(r)? as usize);
    }
    let ncomp = read_u32(r)? as usize;
    let header = SnapshotHeader { extents, ncomp };
    let mut raw = vec![0u8; 8 * header.values()];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn write_field<W: Write>(w: &mut W, field: &StateField) -> Result<()> {
    let header = SnapshotHeader {
        extents: field.grid.n.clone(),
        ncomp: field.ncomp(),
    };
    write_snapshot(w, &header, &field.data)
}

/// Reads a field snapshot; the grid lengths are not stored and must be supplied.
pub fn read_field<R: Read>(r: &mut R, length: &[f64]) -> Result<StateField> {
    let (header, data) = read_snapshot(r)?;
    let grid = Grid::new(&header.extents, length)?;
    if header.ncomp != StateField::ncomp_for(&grid) {
        return Err(Error::Storage(format!(
            "snapshot has {} components, flow state needs {}",
            header.ncomp,
            StateField::ncomp_for(&grid)
        )));
    }
    StateField::from_data(&grid, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spacing_is_length_over_extent() {
        let g = Grid::new(&[64], &[1.0]).unwrap();
        assert_eq!(g.dx, vec![0.015625]);
        let g = Grid::new(&[64, 64], &[1.0, 1.0]).unwrap();
        assert_eq!(g.dx, vec![0.015625, 0.015625]);
    }

    #[test]
    fn small_extent_is_rejected() {
        let err = Grid::new(&[4], &[1.0]).unwrap_err().to_string();
        assert!(err.contains("extent below stencil minimum"), "{err}");
        assert!(err.contains("axis 0"));
        let err = Grid::new(&[16, 16], &[1.0, -2.0]).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn ones_inner_product_counts_entries() {
        let g = Grid::new(&[64], &[1.0]).unwrap();
        let mut a = StateField::zeros(&g);
        a.data.fill(1.0);
        assert_eq!(inner_product(&a, &a).unwrap(), 192.0);
        assert_eq!(l2_norm(&a), 192f64.sqrt());
        let z = StateField::zeros(&g);
        assert_eq!(inner_product(&a, &z).unwrap(), 0.0);
        assert_eq!(l2_norm(&z), 0.0);
    }

    #[test]
    fn inner_product_matches_direct_sum() {
        let g = Grid::new(&[8], &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = StateField::zeros(&g);
        let mut b = StateField::zeros(&g);
        a.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        b.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut brute = 0.0;
        for c in 0..a.ncomp() {
            for i in 0..8 {
                brute += a.component(c)[i] * b.component(c)[i];
            }
        }
        assert_eq!(inner_product(&a, &b).unwrap(), brute);
        assert_eq!(inner_product(&a, &b).unwrap(), inner_product(&b, &a).unwrap());
        let mut a2 = a.clone();
        a2.data.iter_mut().for_each(|v| *v *= 2.0);
        assert_eq!(l2_norm(&a2), 2.0 * l2_norm(&a));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = StateField::zeros(&Grid::new(&[8], &[1.0]).unwrap());
        let b = StateField::zeros(&Grid::new(&[16], &[1.0]).unwrap());
        assert!(matches!(inner_product(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = Grid::new(&[8, 9], &[1.0, 2.0]).unwrap();
        let mut f = StateField::zeros(&g);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 3.0;
        }
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"AFL1");
        assert_eq!(buf.len(), 4 + 4 + 16 + 4 + 8 * f.data.len());
        let back = read_field(&mut buf.as_slice(), &[1.0, 2.0]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn invalid_state_names_location() {
        let g = Grid::new(&[8], &[1.0]).unwrap();
        let rho = vec![1.0; 8];
        let mut p = vec![1.0; 8];
        p[5] = -0.1;
        let err = StateField::from_primitive(&g, &rho, &[vec![0.0; 8]], &p).unwrap_err();
        assert!(matches!(err, Error::InvalidState { component: "p", index: 5, .. }));
    }
}
