//! Banded periodic finite-difference and filter operators.
//!
//! `apply` works row-wise (gather) and `apply_transpose` works column-wise
//! (scatter): each input point pushes `c_j * a[i]` into `out[i + j]`. Both
//! accumulate in a fixed order and multiply by `scale` last, which makes
//! `apply_transpose` of a symmetric filter bitwise equal to `apply`, and that of
//! an antisymmetric derivative bitwise equal to `-apply`.

use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::grid_field::Grid;
use crate::scalar::Scalar;

/// Standard sixth-order central first-derivative half stencil `c_1..c_3`.
pub const CENTRAL6: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];

/// Seven-point dispersion-relation-preserving half stencil (Tam & Webb).
pub const DRP7_TAM_WEBB: [f64; 3] = [0.770882380518, -0.166705904415, 0.020843142770];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilKind {
    Derivative,
    Filter,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DerivativeVariant {
    Central6,
    /// Optimized coefficients; `None` selects the built-in DRP set.
    Drp(Option<[f64; 3]>),
}

impl DerivativeVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "central6" => Ok(Self::Central6),
            "drp" => Ok(Self::Drp(None)),
            other => Err(Error::Validation(format!(
                "unknown derivative variant '{other}' (expected central6 or drp)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilOperator {
    pub kind: StencilKind,
    pub axis: usize,
    pub half_width: usize,
    /// Coefficients for offsets `-half_width ..= half_width`.
    pub coeffs: Vec<f64>,
    pub scale: f64,
    extents: Vec<usize>,
    /// `wrap[i * width + (j + h)] = (i + j) mod n` along the axis.
    wrap: Vec<usize>,
}

impl StencilOperator {
    fn new(
        kind: StencilKind,
        axis: usize,
        coeffs: Vec<f64>,
        scale: f64,
        grid: &Grid,
    ) -> Result<Self> {
        if axis >= grid.ndim() {
            return Err(Error::Validation(format!(
                "axis {axis} out of range for a {}-D grid",
                grid.ndim()
            )));
        }
        let width = coeffs.len();
        let half_width = width / 2;
        let n = grid.n[axis];
        if n < width {
            return Err(Error::Validation(format!(
                "axis {axis}: extent {n} smaller than the {width}-point stencil"
            )));
        }
        let mut wrap = Vec::with_capacity(n * width);
        for i in 0..n {
            for j in 0..width {
                wrap.push((i + n + j - half_width) % n);
            }
        }
        Ok(Self {
            kind,
            axis,
            half_width,
            coeffs,
            scale,
            extents: grid.n.clone(),
            wrap,
        })
    }

    pub fn width(&self) -> usize {
        self.coeffs.len()
    }

    /// Number of points of the grid the operator was built for.
    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficient at offset `j` in `-half_width ..= half_width`.
    pub fn coeff(&self, j: isize) -> f64 {
        self.coeffs[(j + self.half_width as isize) as usize]
    }

    fn geometry(&self) -> (usize, usize, usize) {
        let stride: usize = self.extents[..self.axis].iter().product();
        let n = self.extents[self.axis];
        let outer = self.len() / (stride * n);
        (stride, n, outer)
    }

    /// Max absolute row sum scaled, `||D||_1` (equal to the column sum norm here).
    pub fn norm1(&self) -> f64 {
        self.scale.abs() * self.coeffs.iter().map(|c| c.abs()).sum::<f64>()
    }

    /// `out = D a`, computed row-wise.
    pub fn apply<T: Scalar>(&self, a: &[T], out: &mut [T]) -> Result<()> {
        check_len(self.len(), a.len())?;
        check_len(self.len(), out.len())?;
        self.apply_unchecked(a, out);
        Ok(())
    }

    pub(crate) fn apply_unchecked<T: Scalar>(&self, a: &[T], out: &mut [T]) {
        let (stride, n, outer) = self.geometry();
        let width = self.width();
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * n + inner;
                for i in 0..n {
                    let row = &self.wrap[i * width..(i + 1) * width];
                    let mut acc = T::zero();
                    for (c, &k) in self.coeffs.iter().zip(row) {
                        acc += a[base + k * stride] * *c;
                    }
                    out[base + i * stride] = acc * self.scale;
                }
            }
        }
    }

    /// `out = D^T a`, computed column-wise by scattering each input point.
    pub fn apply_transpose<T: Scalar>(&self, a: &[T], out: &mut [T]) -> Result<()> {
        check_len(self.len(), a.len())?;
        check_len(self.len(), out.len())?;
        self.apply_transpose_unchecked(a, out);
        Ok(())
    }

    pub(crate) fn apply_transpose_unchecked<T: Scalar>(&self, a: &[T], out: &mut [T]) {
        let (stride, n, outer) = self.geometry();
        let width = self.width();
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * n + inner;
                for i in 0..n {
                    out[base + i * stride] = T::zero();
                }
                // Descending offsets give each output the same term order as
                // the gather of the mirrored stencil.
                for j in (0..width).rev() {
                    let c = self.coeffs[j];
                    for i in 0..n {
                        let k = self.wrap[i * width + j];
                        out[base + k * stride] += a[base + i * stride] * c;
                    }
                }
                for i in 0..n {
                    let v = out[base + i * stride];
                    out[base + i * stride] = v * self.scale;
                }
            }
        }
    }

    /// Dense matrix of the operator, row-major `len x len`. Meant for small grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let (stride, n, outer) = self.geometry();
        let len = self.len();
        let mut m = vec![vec![0.0; len]; len];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * n + inner;
                for i in 0..n {
                    for (j, &c) in self.coeffs.iter().enumerate() {
                        let k = self.wrap[i * self.width() + j];
                        m[base + i * stride][base + k * stride] += self.scale * c;
                    }
                }
            }
        }
        m
    }
}

/// Sixth-order (7-point) antisymmetric first-derivative operator along `axis`.
pub fn build_derivative(
    order: usize,
    axis: usize,
    grid: &Grid,
    variant: &DerivativeVariant,
) -> Result<StencilOperator> {
    if order != 6 {
        return Err(Error::Validation(format!(
            "only sixth-order derivative stencils are available, got order {order}"
        )));
    }
    let half = match variant {
        DerivativeVariant::Central6 => CENTRAL6,
        DerivativeVariant::Drp(Some(c)) => *c,
        DerivativeVariant::Drp(None) => DRP7_TAM_WEBB,
    };
    let mut coeffs = vec![0.0; 7];
    for (j, &c) in half.iter().enumerate() {
        coeffs[3 + j + 1] = c;
        coeffs[3 - j - 1] = -c;
    }
    if axis >= grid.ndim() {
        return Err(Error::Validation(format!("axis {axis} out of range")));
    }
    let scale = 1.0 / grid.dx[axis];
    StencilOperator::new(StencilKind::Derivative, axis, coeffs, scale, grid)
}

/// Reads a DRP half stencil: one coefficient per line, `c_1` first.
/// Blank lines and lines starting with `#` are ignored.
pub fn load_drp_coefficients(path: &Path) -> Result<[f64; 3]> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut vals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Config {
            path: path.to_path_buf(),
            message: format!("line {}: not a number: '{t}'", lineno + 1),
        })?;
        vals.push(v);
    }
    vals.try_into().map_err(|v: Vec<f64>| Error::Config {
        path: path.to_path_buf(),
        message: format!("expected 3 half-stencil coefficients, found {}", v.len()),
    })
}

fn binomial(n: u64, k: u64) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Tenth-order 11-point explicit low-pass filter `F = I - strength * H`.
///
/// `H` is the tenth undivided difference normalized so that its response at
/// the Nyquist mode is one; its symbol is `sin^10(k dx / 2)`.
pub fn build_filter(order: usize, axis: usize, grid: &Grid, strength: f64) -> Result<StencilOperator> {
    if order != 10 {
        return Err(Error::Validation(format!(
            "only tenth-order filters are available, got order {order}"
        )));
    }
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::Validation(format!(
            "filter strength must lie in (0, 1], got {strength}"
        )));
    }
    let half = 5i64;
    let mut coeffs = Vec::with_capacity(11);
    for j in -half..=half {
        let sign = if j.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let h = sign * binomial(10, (5 + j) as u64) / 1024.0;
        let identity = if j == 0 { 1.0 } else { 0.0 };
        coeffs.push(identity - strength * h);
    }
    StencilOperator::new(StencilKind::Filter, axis, coeffs, 1.0, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_field::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> Grid {
        Grid::new(&[n], &[1.0]).unwrap()
    }

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dense_mul(m: &[Vec<f64>], a: &[f64]) -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum()).collect()
    }

    /// Assembles the periodic banded matrix directly from the coefficients.
    fn assemble(coeffs: &[f64], scale: f64, n: usize) -> Vec<Vec<f64>> {
        let h = coeffs.len() / 2;
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, &c) in coeffs.iter().enumerate() {
                row[(i + n + j - h) % n] += scale * c;
            }
        }
        m
    }

    fn max_err_sin(n: usize) -> f64 {
        let g = grid1(n);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        let a: Vec<f64> = (0..n).map(|i| (2.0 * PI * g.coord(0, i)).sin()).collect();
        let mut out = vec![0.0; n];
        d.apply(&a, &mut out).unwrap();
        (0..n)
            .map(|i| (out[i] - 2.0 * PI * (2.0 * PI * g.coord(0, i)).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn derivative_annihilates_constants() {
        let g = grid1(16);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        let mut out = vec![1.0; 16];
        d.apply(&[3.7; 16], &mut out).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn derivative_of_sine() {
        assert!(max_err_sin(64) < 1e-5);
        let ratio = max_err_sin(32) / max_err_sin(64);
        assert!((ratio / 64.0 - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn derivative_exact_on_sawtooth_interior() {
        let n = 32;
        let g = grid1(n);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        let a: Vec<f64> = (0..n).map(|i| g.coord(0, i)).collect();
        let mut out = vec![0.0; n];
        d.apply(&a, &mut out).unwrap();
        for v in &out[3..n - 3] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_matches_dense_assembly() {
        let g = grid1(8);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        let a = random(8, 1);
        let mut out = vec![0.0; 8];
        d.apply(&a, &mut out).unwrap();
        let want = dense_mul(&assemble(&d.coeffs, d.scale, 8), &a);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_variant_and_small_grid_fail() {
        assert!(DerivativeVariant::parse("compact").is_err());
        let g = Grid::new(&[8], &[1.0]).unwrap();
        assert!(build_filter(10, 0, &g, 1.0).is_err());
        let g = grid1(16);
        assert!(build_filter(10, 0, &g, 0.0).is_err());
        assert!(build_filter(10, 0, &g, 1.5).is_err());
    }

    #[test]
    fn filter_properties() {
        let n = 64;
        let g = grid1(n);
        let f = build_filter(10, 0, &g, 1.0).unwrap();
        assert!((f.coeffs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut out = vec![0.0; n];
        f.apply(&[2.5; 64], &mut out).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-14));

        let nyq: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        f.apply(&nyq, &mut out).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-14));

        let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * g.coord(0, i)).sin()).collect();
        f.apply(&s, &mut out).unwrap();
        let amp = s.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(amp < 1e-6);
    }

    #[test]
    fn transpose_relations_are_bitwise() {
        let g = Grid::new(&[12, 16], &[1.0, 2.0]).unwrap();
        let a = random(g.len(), 9);
        for axis in 0..2 {
            let d = build_derivative(6, axis, &g, &DerivativeVariant::Central6).unwrap();
            let mut fwd = vec![0.0; g.len()];
            let mut tr = vec![0.0; g.len()];
            d.apply(&a, &mut fwd).unwrap();
            d.apply_transpose(&a, &mut tr).unwrap();
            for (x, y) in fwd.iter().zip(&tr) {
                assert_eq!(*x, -*y);
            }
            let f = build_filter(10, axis, &g, 0.7).unwrap();
            f.apply(&a, &mut fwd).unwrap();
            f.apply_transpose(&a, &mut tr).unwrap();
            assert_eq!(fwd, tr);
        }
    }

    #[test]
    fn transpose_identity_random() {
        let g = grid1(8);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Drp(None)).unwrap();
        let (a, b) = (random(8, 4), random(8, 5));
        let mut da = vec![0.0; 8];
        let mut dtb = vec![0.0; 8];
        d.apply(&a, &mut da).unwrap();
        d.apply_transpose(&b, &mut dtb).unwrap();
        let defect = (dot(&da, &b) - dot(&a, &dtb)).abs();
        let scale = crate::grid_field::norm(&a) * crate::grid_field::norm(&b) * d.norm1();
        assert!(defect <= 1e-14 * scale, "{defect}");
        // column sums of a periodic antisymmetric operator vanish
        assert!(da.iter().sum::<f64>().abs() < 1e-12 * d.norm1());
    }

    #[test]
    fn composite_transpose_identity() {
        // (AB + CD)^T = B^T A^T + D^T C^T against a dense assembly
        let g = grid1(11);
        let a_op = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        let c_op = build_filter(10, 0, &g, 0.5).unwrap();
        let n = g.len();
        let diag_b = random(n, 11);
        let diag_d = random(n, 12);
        let x = random(n, 13);
        let y = random(n, 14);
        // forward: A (B x) + C (D x) with B, D diagonal
        let bx: Vec<f64> = x.iter().zip(&diag_b).map(|(a, b)| a * b).collect();
        let dx: Vec<f64> = x.iter().zip(&diag_d).map(|(a, b)| a * b).collect();
        let mut t1 = vec![0.0; n];
        let mut t2 = vec![0.0; n];
        a_op.apply(&bx, &mut t1).unwrap();
        c_op.apply(&dx, &mut t2).unwrap();
        let fwd: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        // transposed
        a_op.apply_transpose(&y, &mut t1).unwrap();
        c_op.apply_transpose(&y, &mut t2).unwrap();
        let adj: Vec<f64> = (0..n).map(|i| diag_b[i] * t1[i] + diag_d[i] * t2[i]).collect();
        // dense oracle
        let am = assemble(&a_op.coeffs, a_op.scale, n);
        let cm = assemble(&c_op.coeffs, c_op.scale, n);
        let mut dense_t = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                dense_t[j][i] = am[i][j] * diag_b[j] + cm[i][j] * diag_d[j];
            }
        }
        let want = dense_mul(&dense_t, &y);
        for (p, q) in adj.iter().zip(&want) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((dot(&fwd, &y) - dot(&x, &adj)).abs() < 1e-12);
    }

    #[test]
    fn to_dense_matches_direct_assembly() {
        let g = grid1(9);
        let d = build_derivative(6, 0, &g, &DerivativeVariant::Central6).unwrap();
        assert_eq!(d.to_dense(), assemble(&d.coeffs, d.scale, 9));
    }

    #[test]
    fn drp_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("drp.txt");
        std::fs::write(&p, "# Tam-Webb\n0.77\n-0.16\n0.02\n").unwrap();
        assert_eq!(load_drp_coefficients(&p).unwrap(), [0.77, -0.16, 0.02]);
        std::fs::write(&p, "0.77\n").unwrap();
        assert!(load_drp_coefficients(&p).is_err());
    }
}
