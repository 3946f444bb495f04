//! Finite-range decomposition of the 2D log potential.
//!
//! The kernel u = g*g is positive definite with support in the unit disc,
//! and C(r) = int_1^L u(r/l) dl/l vanishes for r >= L while C(0) = u(0) log L.
//! Partial sums v_n(x) = sum_k C(x / L^k) reproduce the log potential at
//! long distance up to a short-distance remainder.

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::torus_distance;
use crate::quad::integrate;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative tolerance for the positive-definiteness proxy.
pub const PD_REL_TOL: f64 = 1e-8;

/// Default absolute tolerance for the C(r) quadrature.
pub const QUAD_TOL: f64 = 1e-8;

/// Number of tabulation intervals for C on [0, L].
pub const COV_INTERVALS: usize = 4096;

/// Radial profile for the mollifier g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GProfile {
    /// exp(-1 / (1 - (2r)^2)) for r < 1/2, zero outside.
    ReferenceBump,
}

impl GProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            GProfile::ReferenceBump => {
                let s = 2.0 * r;
                if s.abs() < 1.0 {
                    (-1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            GProfile::ReferenceBump => "reference-bump",
        }
    }
}

/// Tabulated u = g*g on a radial grid over [0, 1], normalized so u(0) = 1/(2 pi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialKernel {
    pub profile_id: String,
    pub grid_spacing: f64,
    pub support_radius: f64,
    pub values: Vec<f64>,
    pub u0: f64,
}

impl RadialKernel {
    /// Catmull-Rom interpolation of the tabulation; zero at and beyond the
    /// support radius. Cubic order keeps the positive-definiteness proxy
    /// below 1e-8 of the spectral maximum.
    #[inline]
    pub fn at(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            return 0.0;
        }
        let t = r / self.grid_spacing;
        let k = t.floor() as usize;
        if k + 1 >= self.values.len() {
            return 0.0;
        }
        let s = t - k as f64;
        // u is even in r, so the ghost node below 0 mirrors node 1
        let p0 = if k == 0 { self.values[1] } else { self.values[k - 1] };
        let p1 = self.values[k];
        let p2 = self.values[k + 1];
        let p3 = if k + 2 < self.values.len() { self.values[k + 2] } else { 0.0 };
        0.5 * ((2.0 * p1)
            + (p2 - p0) * s
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s * s
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * s * s * s)
    }

    /// Derivative of the tabulated kernel by central differences (test oracle support).
    pub fn derivative(&self, r: f64, step: f64) -> f64 {
        (self.at(r + step) - self.at((r - step).max(0.0))) / (step + step.min(r))
    }
}

/// Build u = g*g by FFT convolution on a 2D grid, then reduce to a radial
/// tabulation along a lattice axis (the convolution is isotropic to spectral
/// accuracy). The tabulation is rescaled so u(0) = 1/(2 pi) exactly.
pub fn make_kernel(profile: GProfile, grid_spacing: f64) -> Result<RadialKernel> {
    if grid_spacing > 1.0 / 256.0 + 1e-15 {
        return Err(Error::Resolution {
            what: "kernel convolution grid",
            required: 1.0 / 256.0,
            got: grid_spacing,
        });
    }
    let n = (2.0 / grid_spacing).round() as usize; // box [-1, 1): large enough that periodic images of supp(u) never overlap
    let n = n.next_power_of_two();
    let h = 2.0 / n as f64;

    // sample g on the periodic box, origin at index 0
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    for iy in 0..n {
        let y = centered(iy, n, h);
        for ix in 0..n {
            let x = centered(ix, n, h);
            buf[iy * n + ix] = Complex64::new(profile.eval((x * x + y * y).sqrt()), 0.0);
        }
    }

    let fft = Fft2::new(n);
    fft.forward(&mut buf);
    for z in buf.iter_mut() {
        *z = *z * *z;
    }
    fft.inverse(&mut buf);
    let conv_scale = h * h / (n * n) as f64;

    // radial profile along the +x axis; entries at r >= 1 are exact zeros
    let n_r = (1.0 / grid_spacing).round() as usize;
    let mut values: Vec<f64> = (0..=n_r)
        .map(|k| {
            if k >= n_r {
                0.0
            } else {
                buf[k].re * conv_scale
            }
        })
        .collect();
    let raw_u0 = values[0];
    let scale = 1.0 / (2.0 * PI * raw_u0);
    for v in &mut values[..n_r] {
        *v *= scale;
    }

    let kernel = RadialKernel {
        profile_id: profile.id().to_string(),
        grid_spacing,
        support_radius: 1.0,
        values,
        u0: 1.0 / (2.0 * PI),
    };
    check_positive_definite(&kernel, n.min(512))?;
    Ok(kernel)
}

#[inline]
fn centered(i: usize, n: usize, h: f64) -> f64 {
    let mut k = i as isize;
    if k > (n / 2) as isize {
        k -= n as isize;
    }
    k as f64 * h
}

/// Positive-definiteness proxy: the 2D DFT of the tabulated kernel, re-expanded
/// onto a grid, must be >= -PD_REL_TOL times its maximum.
pub fn check_positive_definite(kernel: &RadialKernel, n: usize) -> Result<()> {
    let (min, max) = pd_spectrum_extrema(kernel, n);
    if min < -PD_REL_TOL * max {
        return Err(Error::NotPositiveDefinite {
            min,
            tol: PD_REL_TOL * max,
        });
    }
    Ok(())
}

/// (min, max) of the 2D Fourier spectrum of the re-expanded tabulation.
pub fn pd_spectrum_extrema(kernel: &RadialKernel, n: usize) -> (f64, f64) {
    let h = 2.2 / n as f64;
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    for iy in 0..n {
        let y = centered(iy, n, h);
        for ix in 0..n {
            let x = centered(ix, n, h);
            buf[iy * n + ix] = Complex64::new(kernel.at((x * x + y * y).sqrt()), 0.0);
        }
    }
    Fft2::new(n).forward(&mut buf);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for z in &buf {
        min = min.min(z.re);
        max = max.max(z.re);
    }
    (min, max)
}

/// C(r) = int_1^L u(r/l) dl/l by adaptive quadrature (closed form at r = 0).
pub fn eval_c(kernel: &RadialKernel, l_scale: u32, r: f64, tol: f64) -> f64 {
    let l = l_scale as f64;
    if r >= l * kernel.support_radius {
        return 0.0;
    }
    if r == 0.0 {
        // the integrand is exactly u(0)/l
        return kernel.u0 * l.ln();
    }
    // u(r/s) vanishes for s <= r
    let lo = r.max(1.0);
    integrate(|s| kernel.at(r / s) / s, lo, l, tol)
}

/// Tabulated finite-range covariance C on [0, L].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteRangeCovariance {
    pub kernel: RadialKernel,
    pub l_scale: u32,
    pub values: Vec<f64>,
    pub dr: f64,
}

impl FiniteRangeCovariance {
    pub fn build(kernel: RadialKernel, l_scale: u32) -> Result<Self> {
        Self::build_with(kernel, l_scale, COV_INTERVALS, QUAD_TOL)
    }

    pub fn build_with(
        kernel: RadialKernel,
        l_scale: u32,
        intervals: usize,
        quad_tol: f64,
    ) -> Result<Self> {
        if l_scale < 2 {
            return Err(Error::Config(format!("L must be >= 2, got {l_scale}")));
        }
        let l = l_scale as f64;
        let dr = l / intervals as f64;
        let values: Vec<f64> = (0..=intervals)
            .map(|k| eval_c(&kernel, l_scale, k as f64 * dr, quad_tol))
            .collect();
        Ok(Self {
            kernel,
            l_scale,
            values,
            dr,
        })
    }

    /// Interpolated C(r); exactly zero for r >= L.
    #[inline]
    pub fn at(&self, r: f64) -> f64 {
        if r >= self.l_scale as f64 {
            return 0.0;
        }
        let t = r / self.dr;
        let k = t.floor() as usize;
        if k + 1 >= self.values.len() {
            return 0.0;
        }
        let frac = t - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }

    #[inline]
    pub fn c0(&self) -> f64 {
        self.values[0]
    }
}

/// Multi-scale partial sums v_n(x) = sum_{k<n} C(L^{-k} x) on a torus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleDecomposition {
    pub cov: FiniteRangeCovariance,
    pub n_scales: usize,
    pub torus_side: f64,
}

impl ScaleDecomposition {
    pub fn new(cov: FiniteRangeCovariance, n_scales: usize, torus_side: f64) -> Result<Self> {
        if n_scales < 1 {
            return Err(Error::Config("n_scales must be >= 1".into()));
        }
        Ok(Self {
            cov,
            n_scales,
            torus_side,
        })
    }

    /// v_n at a torus displacement.
    pub fn eval_v(&self, dx: (f64, f64)) -> f64 {
        self.v_of_r(torus_distance(self.torus_side, dx, (0.0, 0.0)))
    }

    /// v_n as a function of (already minimal-image) distance.
    pub fn v_of_r(&self, r: f64) -> f64 {
        let l = self.cov.l_scale as f64;
        let mut scale = 1.0;
        let mut sum = 0.0;
        for _ in 0..self.n_scales {
            sum += self.cov.at(r * scale);
            scale /= l;
        }
        sum
    }

    /// v_n(0) = n * C(0).
    pub fn v_at_zero(&self) -> f64 {
        self.n_scales as f64 * self.cov.c0()
    }

    /// Same partial sum with every term evaluated by direct quadrature
    /// instead of the tabulation (used where 1e-9 scale resolution matters).
    pub fn v_of_r_quad(&self, r: f64, tol: f64) -> f64 {
        let l = self.cov.l_scale as f64;
        let mut scale = 1.0;
        let mut sum = 0.0;
        for _ in 0..self.n_scales {
            sum += eval_c(&self.cov.kernel, self.cov.l_scale, r * scale, tol);
            scale /= l;
        }
        sum
    }
}

/// Point charges on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeConfig {
    pub charges: Vec<((f64, f64), f64)>,
}

impl ChargeConfig {
    pub fn new(charges: Vec<((f64, f64), f64)>) -> Self {
        Self { charges }
    }

    pub fn single(pos: (f64, f64), e: f64) -> Self {
        Self {
            charges: vec![(pos, e)],
        }
    }

    pub fn pair(a: (f64, f64), b: (f64, f64)) -> Self {
        Self {
            charges: vec![(a, 1.0), (b, -1.0)],
        }
    }

    pub fn total_charge(&self) -> f64 {
        self.charges.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_neutral(&self) -> bool {
        self.total_charge().abs() < 1e-12
    }
}

/// (rho, v_n rho) including the self-energy diagonal.
pub fn pair_energy(sd: &ScaleDecomposition, rho: &ChargeConfig) -> f64 {
    let v0 = sd.v_at_zero();
    let mut sum = 0.0;
    for (i, &(xi, ei)) in rho.charges.iter().enumerate() {
        sum += ei * ei * v0;
        for &(xj, ej) in rho.charges.iter().skip(i + 1) {
            let r = torus_distance(sd.torus_side, xi, xj);
            sum += 2.0 * ei * ej * sd.v_of_r(r);
        }
    }
    sum
}

/// Outcome of the log-consistency check against const * log r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LogConsistency {
    /// |v_{0,M}(r) - v_{0,M}(1) - const*log r| for r >= 1.
    Deviation { deviation: f64, const_used: f64 },
    /// The short-distance remainder w(r) = -int_r^1 u(t)/t dt for r < 1.
    ShortDistance { w: f64 },
}

/// Compare v_{0,M}(r) - v_{0,M}(1) with const*log r, const = -u(0).
///
/// Terms are evaluated by direct quadrature so the deviation resolves
/// below the tabulation's interpolation floor.
pub fn log_consistency(sd: &ScaleDecomposition, r: f64) -> Result<LogConsistency> {
    if r <= 0.0 {
        return Err(Error::Config("log_consistency needs r > 0".into()));
    }
    let kernel = &sd.cov.kernel;
    if r < 1.0 {
        let w = -integrate(|t| kernel.at(t) / t, r, 1.0, 1e-11);
        return Ok(LogConsistency::ShortDistance { w });
    }
    let tol = 1e-11;
    let v_r = sd.v_of_r_quad(r, tol);
    let v_1 = sd.v_of_r_quad(1.0, tol);
    let const_used = -kernel.u0;
    Ok(LogConsistency::Deviation {
        deviation: ((v_r - v_1) - const_used * r.ln()).abs(),
        const_used,
    })
}

/// Sup over small-set shapes of the inf over base points of
/// ||C(. - x) - C(0)||_{C^r(X)}, with derivatives by central differences.
///
/// `shapes` are block coordinate sets (unit blocks); the value is the
/// analyticity loss N_C of the fluctuation step.
pub fn analyticity_loss_nc(
    cov: &FiniteRangeCovariance,
    shapes: &[Vec<(i32, i32)>],
    r_derivatives: usize,
    fd_step: f64,
) -> Result<f64> {
    if cov.dr > fd_step / 4.0 {
        return Err(Error::Resolution {
            what: "covariance tabulation for finite differences",
            required: fd_step / 4.0,
            got: cov.dr,
        });
    }
    let probes_per_side = 4usize;
    let mut sup = 0.0f64;
    for shape in shapes {
        let mut inf = f64::INFINITY;
        for &(bx, by) in shape {
            for px in 0..probes_per_side {
                for py in 0..probes_per_side {
                    let x = (
                        bx as f64 + (px as f64 + 0.5) / probes_per_side as f64,
                        by as f64 + (py as f64 + 0.5) / probes_per_side as f64,
                    );
                    let norm = cr_norm_of_shifted_cov(cov, shape, x, r_derivatives, fd_step);
                    inf = inf.min(norm);
                }
            }
        }
        sup = sup.max(inf);
    }
    Ok(sup)
}

fn cr_norm_of_shifted_cov(
    cov: &FiniteRangeCovariance,
    shape: &[(i32, i32)],
    x: (f64, f64),
    r_derivatives: usize,
    fd: f64,
) -> f64 {
    let f = |y: (f64, f64)| {
        let d = ((y.0 - x.0).powi(2) + (y.1 - x.1).powi(2)).sqrt();
        cov.at(d) - cov.c0()
    };
    let grid_per_side = 8usize;
    let mut best = 0.0f64;
    for &(bx, by) in shape {
        for gy in 0..=grid_per_side {
            for gx in 0..=grid_per_side {
                let y = (
                    bx as f64 + gx as f64 / grid_per_side as f64,
                    by as f64 + gy as f64 / grid_per_side as f64,
                );
                best = best.max(f(y).abs());
                if r_derivatives >= 1 {
                    let d10 = (f((y.0 + fd, y.1)) - f((y.0 - fd, y.1))) / (2.0 * fd);
                    let d01 = (f((y.0, y.1 + fd)) - f((y.0, y.1 - fd))) / (2.0 * fd);
                    best = best.max(d10.abs()).max(d01.abs());
                }
                if r_derivatives >= 2 {
                    let d20 = (f((y.0 + fd, y.1)) - 2.0 * f(y) + f((y.0 - fd, y.1))) / (fd * fd);
                    let d02 = (f((y.0, y.1 + fd)) - 2.0 * f(y) + f((y.0, y.1 - fd))) / (fd * fd);
                    let d11 = (f((y.0 + fd, y.1 + fd)) - f((y.0 + fd, y.1 - fd))
                        - f((y.0 - fd, y.1 + fd))
                        + f((y.0 - fd, y.1 - fd)))
                        / (4.0 * fd * fd);
                    best = best.max(d20.abs()).max(d02.abs()).max(d11.abs());
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    pub(crate) fn reference_kernel() -> &'static RadialKernel {
        static KERNEL: OnceLock<RadialKernel> = OnceLock::new();
        KERNEL.get_or_init(|| make_kernel(GProfile::ReferenceBump, 1.0 / 256.0).unwrap())
    }

    #[test]
    fn kernel_normalization_and_support() {
        let k = reference_kernel();
        assert_abs_diff_eq!(k.values[0], 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_eq!(k.at(1.0), 0.0);
        assert_eq!(k.at(1.7), 0.0);
        // tabulated zeros at and beyond the support radius, bit-exact
        assert_eq!(*k.values.last().unwrap(), 0.0);
    }

    #[test]
    fn kernel_positive_definite_proxy() {
        // direct 2D discrete Fourier transform oracle
        let k = reference_kernel();
        let (min, max) = pd_spectrum_extrema(k, 512);
        assert!(max > 0.0);
        assert!(
            min >= -1e-8 * max,
            "min spectrum {min:.3e} vs max {max:.3e}"
        );
    }

    #[test]
    fn c_at_zero_is_log_l_over_2pi() {
        let k = reference_kernel();
        for l in [2u32, 4, 8, 16, 32] {
            let c0 = eval_c(k, l, 0.0, QUAD_TOL);
            assert_abs_diff_eq!(c0, (l as f64).ln() / (2.0 * PI), epsilon = 1e-9);
        }
        // frozen closed-form value ln(8)/(2 pi) at L = 8
        assert_abs_diff_eq!(eval_c(k, 8, 0.0, QUAD_TOL), 0.330_953_400_2, epsilon = 1e-6);
    }

    #[test]
    fn c_vanishes_at_and_beyond_range() {
        let k = reference_kernel();
        assert_eq!(eval_c(k, 8, 8.0, QUAD_TOL), 0.0);
        assert_eq!(eval_c(k, 8, 11.3, QUAD_TOL), 0.0);
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        assert_eq!(cov.at(4.0), 0.0);
        assert_eq!(*cov.values.last().unwrap(), 0.0);
    }

    #[test]
    fn quadrature_matches_brute_force_riemann() {
        // independent oracle: midpoint Riemann sum with 1e6 panels
        let k = reference_kernel();
        let r = 2.0f64;
        let (lo, hi) = (r.max(1.0), 8.0);
        let n = 1_000_000usize;
        let dh = (hi - lo) / n as f64;
        let mut riemann = 0.0;
        for i in 0..n {
            let s = lo + (i as f64 + 0.5) * dh;
            riemann += k.at(r / s) / s;
        }
        riemann *= dh;
        let adaptive = eval_c(k, 8, r, QUAD_TOL);
        assert_abs_diff_eq!(adaptive, riemann, epsilon = 1e-6);
    }

    #[test]
    fn covariance_monotone_non_increasing() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 8).unwrap();
        for w in cov.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn scale_recursion_holds_at_tabulation_points() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let l = 4.0;
        for n in 1..=4usize {
            let sd_n = ScaleDecomposition::new(cov.clone(), n, 1e9).unwrap();
            for r in [0.0, 0.37, 1.0, 3.0, 3.9, 7.5, 15.0] {
                let lhs = sd_n.v_of_r(r);
                let rhs = if n == 1 {
                    cov.at(r)
                } else {
                    let sd_prev = ScaleDecomposition::new(cov.clone(), n - 1, 1e9).unwrap();
                    cov.at(r) + sd_prev.v_of_r(r / l)
                };
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn partial_sums_have_finite_range() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        for n in 1..=3usize {
            let sd = ScaleDecomposition::new(cov.clone(), n, 1e9).unwrap();
            let range = 4f64.powi(n as i32);
            assert_eq!(sd.v_of_r(range), 0.0);
            assert_eq!(sd.v_of_r(range * 1.9), 0.0);
            assert!(sd.v_of_r(range * 0.99) != 0.0);
        }
    }

    #[test]
    fn single_scale_is_c() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let sd = ScaleDecomposition::new(cov.clone(), 1, 1e9).unwrap();
        for r in [0.0, 0.5, 1.5, 3.0] {
            assert_eq!(sd.v_of_r(r), cov.at(r));
        }
    }

    #[test]
    fn log_consistency_zero_at_r_one() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let sd = ScaleDecomposition::new(cov, 6, 1e9).unwrap();
        match log_consistency(&sd, 1.0).unwrap() {
            LogConsistency::Deviation { deviation, .. } => assert!(deviation < 1e-12),
            _ => panic!("expected deviation branch"),
        }
    }

    #[test]
    fn log_consistency_constant_matches_derivative_oracle() {
        // oracle: const = int_0^1 u'(t) dt = u(1) - u(0) = -u(0)
        let k = reference_kernel();
        let n = 400_000usize;
        let dh = 1.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) * dh;
            integral += (k.at(t + 0.5 * dh) - k.at(t - 0.5 * dh)) / dh * dh;
        }
        assert_abs_diff_eq!(integral, -1.0 / (2.0 * PI), epsilon = 1e-4);
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let sd = ScaleDecomposition::new(cov, 6, 1e9).unwrap();
        match log_consistency(&sd, 4.0).unwrap() {
            LogConsistency::Deviation { const_used, .. } => {
                assert_abs_diff_eq!(const_used, -1.0 / (2.0 * PI), epsilon = 1e-15);
            }
            _ => panic!("expected deviation branch"),
        }
    }

    #[test]
    fn log_consistency_deviation_shrinks_with_scales() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let r = 8.0;
        let mut last = f64::INFINITY;
        for n in [4usize, 6, 8] {
            let sd = ScaleDecomposition::new(cov.clone(), n, 1e9).unwrap();
            match log_consistency(&sd, r).unwrap() {
                LogConsistency::Deviation { deviation, .. } => {
                    assert!(
                        deviation < last,
                        "deviation {deviation:.3e} not below {last:.3e} at n={n}"
                    );
                    last = deviation;
                }
                _ => panic!("expected deviation branch"),
            }
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn short_distance_branch_reports_remainder() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let sd = ScaleDecomposition::new(cov, 4, 1e9).unwrap();
        match log_consistency(&sd, 0.5).unwrap() {
            LogConsistency::ShortDistance { w } => assert!(w < 0.0),
            _ => panic!("expected short-distance branch"),
        }
    }

    #[test]
    fn single_charge_energy_is_linear_in_scales() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let c0 = cov.c0();
        let rho = ChargeConfig::single((3.0, 5.0), 1.0);
        for n in [1usize, 3, 7] {
            let sd = ScaleDecomposition::new(cov.clone(), n, 64.0).unwrap();
            assert_abs_diff_eq!(pair_energy(&sd, &rho), n as f64 * c0, epsilon = 1e-12);
        }
    }

    #[test]
    fn coincident_opposite_charges_cancel() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let sd = ScaleDecomposition::new(cov, 5, 64.0).unwrap();
        let rho = ChargeConfig::new(vec![((2.0, 2.0), 1.0), ((2.0, 2.0), -1.0)]);
        // v(0) diagonal terms cancel against the off-diagonal at distance 0
        assert_abs_diff_eq!(pair_energy(&sd, &rho), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn neutral_pair_energy_is_cauchy_in_scales() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 4).unwrap();
        let rho = ChargeConfig::pair((1.0, 1.0), (3.0, 1.0));
        let e6 = pair_energy(&ScaleDecomposition::new(cov.clone(), 6, 1e6).unwrap(), &rho);
        let e10 = pair_energy(&ScaleDecomposition::new(cov.clone(), 10, 1e6).unwrap(), &rho);
        assert!((e10 - e6).abs() <= 1e-6, "gap {:.3e}", (e10 - e6).abs());
        // successive differences shrink geometrically
        let mut prev_gap = f64::INFINITY;
        let mut prev = pair_energy(&ScaleDecomposition::new(cov.clone(), 4, 1e6).unwrap(), &rho);
        for n in 5..=9 {
            let e = pair_energy(&ScaleDecomposition::new(cov.clone(), n, 1e6).unwrap(), &rho);
            let gap = (e - prev).abs();
            assert!(gap <= prev_gap);
            prev_gap = gap;
            prev = e;
        }
    }

    #[test]
    fn non_neutral_energy_grows_log_l_per_scale() {
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 8).unwrap();
        let rho = ChargeConfig::single((0.0, 0.0), 1.0);
        let mut prev = 0.0;
        for n in 1..=6usize {
            let sd = ScaleDecomposition::new(cov.clone(), n, 1e6).unwrap();
            let e = pair_energy(&sd, &rho);
            if n > 1 {
                assert_abs_diff_eq!(e - prev, 8f64.ln() / (2.0 * PI), epsilon = 1e-9);
            }
            prev = e;
        }
    }

    #[test]
    fn nc_is_order_one_across_l() {
        let k = reference_kernel();
        let shapes: Vec<Vec<(i32, i32)>> = vec![
            vec![(0, 0)],
            vec![(0, 0), (1, 0)],
            vec![(0, 0), (1, 1)],
            vec![(0, 0), (1, 0), (0, 1), (1, 1)],
            vec![(0, 0), (1, 0), (2, 0), (3, 0)],
        ];
        let nc8 = {
            let cov = FiniteRangeCovariance::build(k.clone(), 8).unwrap();
            analyticity_loss_nc(&cov, &shapes, 2, 1.0 / 16.0).unwrap()
        };
        let nc32 = {
            let cov = FiniteRangeCovariance::build(k.clone(), 32).unwrap();
            analyticity_loss_nc(&cov, &shapes, 2, 1.0 / 16.0).unwrap()
        };
        assert!(nc8.is_finite() && nc32.is_finite());
        let ratio = nc8 / nc32;
        assert!(
            (0.25..=4.0).contains(&ratio),
            "N_C ratio {ratio:.3} out of [1/4, 4] (nc8={nc8:.4}, nc32={nc32:.4})"
        );
    }

    #[test]
    fn nc_zero_for_constant_covariance() {
        let k = reference_kernel();
        let mut cov = FiniteRangeCovariance::build(k.clone(), 8).unwrap();
        let c0 = cov.c0();
        for v in &mut cov.values {
            *v = c0;
        }
        // constant C has C(y-x) - C(0) = 0 inside the range
        let shapes = vec![vec![(0, 0)]];
        let nc = analyticity_loss_nc(&cov, &shapes, 0, 1.0 / 16.0).unwrap();
        assert!(nc < 1e-12);
    }

    #[test]
    fn nc_single_block_bounded_by_derivative_estimate() {
        // |C(y-x) - C(0)| <= int_1^L l^-2 dl * max|u'| for |y-x| <= O(1)
        let k = reference_kernel();
        let cov = FiniteRangeCovariance::build(k.clone(), 8).unwrap();
        let shapes = vec![vec![(0, 0)]];
        let nc0 = analyticity_loss_nc(&cov, &shapes, 0, 1.0 / 16.0).unwrap();
        let max_uprime = (0..=1000)
            .map(|i| (k.derivative(i as f64 / 1000.0, 1e-3)).abs())
            .fold(0.0f64, f64::max);
        // sqrt(2) block diagonal reach enters via |x-y| <= sqrt(2) * argument scaling
        let bound = (1.0 - 1.0 / 8.0) * max_uprime * 2f64.sqrt();
        assert!(nc0 <= bound, "nc0 {nc0:.4} vs bound {bound:.4}");
    }
}
