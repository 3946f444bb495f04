//! Monte Carlo measurement of the truncated dipole-dipole correlation and
//! charged observables under the interacting measure, via importance
//! reweighting of free-field samples, plus power-law exponent fitting.

use crate::covariance::{ChargeConfig, ScaleDecomposition};
use crate::error::{Error, Result};
use crate::gaussian::{build_multiscale, charge_moment, v_periodized, MultiscaleSampler};
use crate::grid::TorusGrid;
use crate::rng::SeedSplitter;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed chain count: reductions merge per-chain sums in chain order, so
/// results are bit-identical regardless of scheduling.
pub const N_CHAINS: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub config_digest: String,
    /// effective sample size of the reweighting
    pub ess: f64,
}

/// 4th-order central difference stencil (offset, weight/h).
const STENCIL4: [(isize, f64); 4] = [
    (-2, 1.0 / 12.0),
    (-1, -8.0 / 12.0),
    (1, 8.0 / 12.0),
    (2, -1.0 / 12.0),
];

fn directional_derivative(
    values: &[f64],
    grid: &TorusGrid,
    node: (usize, usize),
    n_dir: (f64, f64),
) -> f64 {
    let h = grid.spacing;
    let (ix, iy) = (node.0 as isize, node.1 as isize);
    let mut dx = 0.0;
    let mut dy = 0.0;
    for &(o, w) in &STENCIL4 {
        dx += w * values[grid.index(grid.wrap(ix + o), grid.wrap(iy))];
        dy += w * values[grid.index(grid.wrap(ix), grid.wrap(iy + o))];
    }
    (n_dir.0 * dx + n_dir.1 * dy) / h
}

/// Exact covariance of the discrete dipole observables under the sampled
/// (periodized) Gaussian measure: the z = 0 oracle for `truncated_corr`.
pub fn free_dipole_covariance(
    sd: &ScaleDecomposition,
    grid: &TorusGrid,
    beta: f64,
    a: (usize, usize),
    b: (usize, usize),
    n1: (f64, f64),
    n2: (f64, f64),
) -> f64 {
    let h = grid.spacing;
    let axes = [(1isize, 0isize), (0, 1)];
    let mut total = 0.0;
    for (a1, &e1) in axes.iter().enumerate() {
        let w1 = if a1 == 0 { n1.0 } else { n1.1 };
        if w1 == 0.0 {
            continue;
        }
        for (a2, &e2) in axes.iter().enumerate() {
            let w2 = if a2 == 0 { n2.0 } else { n2.1 };
            if w2 == 0.0 {
                continue;
            }
            for &(o1, c1) in &STENCIL4 {
                for &(o2, c2) in &STENCIL4 {
                    let dx = (b.0 as isize + o2 * e2.0 - a.0 as isize - o1 * e1.0) as f64 * h;
                    let dy = (b.1 as isize + o2 * e2.1 - a.1 as isize - o1 * e1.1) as f64 * h;
                    total += w1 * w2 * c1 * c2 / (h * h) * beta * v_periodized(sd, (dx, dy));
                }
            }
        }
    }
    total
}

struct ChainSums {
    w: f64,
    w2: f64,
    pw: Vec<f64>,
    uw: Vec<f64>,
    vw: Vec<f64>,
    /// per-bin partial sums for the jackknife: (w, pw, uw, vw) per bin
    bins: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

/// Reweighted connected dipole-dipole correlator at the given separations:
/// <XY w>/<w> - <Xw><Yw>/<w>^2 with X = n1.grad phi(a), Y = n2.grad phi(b),
/// w = exp(z W(Lambda, phi)). With `translation_average` the product is
/// averaged over all anchors (and symmetrized, so swapping the dipoles is a
/// bitwise no-op).
#[allow(clippy::too_many_arguments)]
pub fn truncated_corr_multi(
    separations: &[(isize, isize)],
    n1: (f64, f64),
    n2: (f64, f64),
    z: f64,
    beta: f64,
    sd: &ScaleDecomposition,
    grid: TorusGrid,
    n_samples: usize,
    seed: u64,
    translation_average: bool,
    anchor: (usize, usize),
    bins_per_chain: usize,
) -> Result<Vec<EstimatorResult>> {
    let sampler = build_multiscale(grid, sd, beta, true)?;
    let n_sep = separations.len();
    let per_chain = n_samples / N_CHAINS;
    let splitter = SeedSplitter::new(seed);
    let h2 = grid.spacing * grid.spacing;
    let n = grid.points_per_side;

    let chains: Vec<ChainSums> = (0..N_CHAINS)
        .into_par_iter()
        .map(|chain| {
            let mut rng = splitter.stream(chain as u64);
            let mut buf = Vec::new();
            let mut values = vec![0.0; grid.n_points()];
            let mut sums = ChainSums {
                w: 0.0,
                w2: 0.0,
                pw: vec![0.0; n_sep],
                uw: vec![0.0; n_sep],
                vw: vec![0.0; n_sep],
                bins: Vec::with_capacity(bins_per_chain),
            };
            let per_bin = per_chain / bins_per_chain;
            for _bin in 0..bins_per_chain {
                let mut bw = 0.0;
                let mut bpw = vec![0.0; n_sep];
                let mut buw = vec![0.0; n_sep];
                let mut bvw = vec![0.0; n_sep];
                for _ in 0..per_bin {
                    values.iter_mut().for_each(|v| *v = 0.0);
                    sampler.sample_into(&mut rng, &mut buf, &mut values);
                    let w = if z == 0.0 {
                        1.0
                    } else {
                        let cos_sum: f64 = values.iter().map(|&p| p.cos()).sum();
                        (z * h2 * cos_sum).exp()
                    };
                    bw += w;
                    sums.w2 += w * w;
                    for (k, &(dx, dy)) in separations.iter().enumerate() {
                        let (p, u, v) = if translation_average {
                            let mut acc = 0.0;
                            let mut su = 0.0;
                            let mut sv = 0.0;
                            for ay in 0..n {
                                for ax in 0..n {
                                    let x1 = directional_derivative(&values, &grid, (ax, ay), n1);
                                    let y1 = directional_derivative(
                                        &values,
                                        &grid,
                                        (grid.wrap(ax as isize + dx), grid.wrap(ay as isize + dy)),
                                        n2,
                                    );
                                    // symmetric kernel: swap-invariant bit for bit
                                    let y0 = directional_derivative(&values, &grid, (ax, ay), n2);
                                    let x2 = directional_derivative(
                                        &values,
                                        &grid,
                                        (grid.wrap(ax as isize + dx), grid.wrap(ay as isize + dy)),
                                        n1,
                                    );
                                    acc += x1 * y1 + y0 * x2;
                                    su += x1;
                                    sv += y0;
                                }
                            }
                            let n_tot = (n * n) as f64;
                            (acc / (2.0 * n_tot), su / n_tot, sv / n_tot)
                        } else {
                            let bnode = (
                                grid.wrap(anchor.0 as isize + dx),
                                grid.wrap(anchor.1 as isize + dy),
                            );
                            let x1 = directional_derivative(&values, &grid, anchor, n1);
                            let y1 = directional_derivative(&values, &grid, bnode, n2);
                            (x1 * y1, x1, y1)
                        };
                        bpw[k] += p * w;
                        buw[k] += u * w;
                        bvw[k] += v * w;
                    }
                }
                sums.w += bw;
                for k in 0..n_sep {
                    sums.pw[k] += bpw[k];
                    sums.uw[k] += buw[k];
                    sums.vw[k] += bvw[k];
                }
                sums.bins.push((bw, bpw, buw, bvw));
            }
            sums
        })
        .collect();

    let n_used = (per_chain / bins_per_chain) * bins_per_chain * N_CHAINS;
    let w_tot: f64 = chains.iter().map(|c| c.w).sum();
    let w2_tot: f64 = chains.iter().map(|c| c.w2).sum();
    let ess = w_tot * w_tot / w2_tot;
    if ess < n_used as f64 / 100.0 {
        return Err(Error::ReweightingBreakdown {
            ess,
            n_samples: n_used,
        });
    }

    let connected = |w: f64, pw: f64, uw: f64, vw: f64| pw / w - (uw * vw) / (w * w);

    let mut out = Vec::with_capacity(n_sep);
    for k in 0..n_sep {
        let pw_tot: f64 = chains.iter().map(|c| c.pw[k]).sum();
        let uw_tot: f64 = chains.iter().map(|c| c.uw[k]).sum();
        let vw_tot: f64 = chains.iter().map(|c| c.vw[k]).sum();
        let full = connected(w_tot, pw_tot, uw_tot, vw_tot);

        // delete-one-bin jackknife over all chains
        let mut jk = Vec::new();
        for c in &chains {
            for (bw, bpw, buw, bvw) in &c.bins {
                jk.push(connected(
                    w_tot - bw,
                    pw_tot - bpw[k],
                    uw_tot - buw[k],
                    vw_tot - bvw[k],
                ));
            }
        }
        let nb = jk.len() as f64;
        let mean_jk: f64 = jk.iter().sum::<f64>() / nb;
        let var_jk: f64 = jk.iter().map(|&v| (v - mean_jk).powi(2)).sum::<f64>() * (nb - 1.0) / nb;
        out.push(EstimatorResult {
            name: format!("truncated_corr[{k}]"),
            value: full,
            stderr: var_jk.sqrt(),
            n_samples: n_used,
            seed,
            config_digest: String::new(),
            ess,
        });
    }
    Ok(out)
}

/// Single-separation wrapper matching the operation signature.
#[allow(clippy::too_many_arguments)]
pub fn truncated_corr(
    a: (usize, usize),
    b: (usize, usize),
    n1: (f64, f64),
    n2: (f64, f64),
    z: f64,
    beta: f64,
    sd: &ScaleDecomposition,
    grid: TorusGrid,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    let d = (
        b.0 as isize - a.0 as isize,
        b.1 as isize - a.1 as isize,
    );
    let mut v = truncated_corr_multi(
        &[d],
        n1,
        n2,
        z,
        beta,
        sd,
        grid,
        n_samples,
        seed,
        false,
        a,
        50,
    )?;
    Ok(v.remove(0))
}

/// Least-squares power-law fit of log|corr| against log separation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub residual_rms: f64,
    pub fit_range: (f64, f64),
    /// max/min separation ratio; a full decade is not always reachable on
    /// wrap-limited grids
    pub span_ratio: f64,
    pub n_points: usize,
    /// separations dropped because their estimate was consistent with zero
    pub excluded: Vec<f64>,
}

pub fn fit_power_law(points: &[(f64, f64, f64)]) -> Result<PowerLawFit> {
    // points: (separation, value, stderr); drop entries consistent with 0 at 2 sigma
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for &(r, v, s) in points {
        if v.abs() <= 2.0 * s {
            excluded.push(r);
            continue;
        }
        xs.push(r.ln());
        ys.push(v.abs().ln());
    }
    let n = xs.len();
    if n < 4 {
        return Err(Error::DegenerateFit("need at least 4 usable separations"));
    }
    let xbar: f64 = xs.iter().sum::<f64>() / n as f64;
    let ybar: f64 = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|&x| (x - xbar).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(Error::DegenerateFit("separations are all equal"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| (y - slope * x - intercept).powi(2))
        .sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let slope_stderr = (ss_res / dof / sxx).sqrt();
    let (rmin, rmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x.exp()), hi.max(x.exp()))
        });
    Ok(PowerLawFit {
        exponent: slope,
        exponent_stderr: slope_stderr,
        residual_rms: (ss_res / n as f64).sqrt(),
        fit_range: (rmin, rmax),
        span_ratio: rmax / rmin,
        n_points: n,
        excluded,
    })
}

/// Run the correlator over a separation list and fit the decay exponent.
#[allow(clippy::too_many_arguments)]
pub fn decay_scan(
    separations: &[isize],
    z: f64,
    beta: f64,
    sd: &ScaleDecomposition,
    grid: TorusGrid,
    n_samples: usize,
    seed: u64,
) -> Result<(PowerLawFit, Vec<(f64, EstimatorResult)>)> {
    for &s in separations {
        let phys = s as f64 * grid.spacing;
        if phys < 4.0 || phys > grid.physical_side / 4.0 {
            return Err(Error::Config(format!(
                "separation {phys} outside the wrap-safe window [4, side/4]"
            )));
        }
    }
    // transverse dipoles: separation along x, directions along y
    let seps: Vec<(isize, isize)> = separations.iter().map(|&s| (s, 0)).collect();
    let results = truncated_corr_multi(
        &seps,
        (0.0, 1.0),
        (0.0, 1.0),
        z,
        beta,
        sd,
        grid,
        n_samples,
        seed,
        true,
        (0, 0),
        25,
    )?;
    let points: Vec<(f64, f64, f64)> = separations
        .iter()
        .zip(&results)
        .map(|(&s, r)| (s as f64 * grid.spacing, r.value, r.stderr))
        .collect();
    let fit = fit_power_law(&points)?;
    let labeled = points
        .iter()
        .zip(results)
        .map(|(&(r, _, _), e)| (r, e))
        .collect();
    Ok((fit, labeled))
}

/// Charged one-point function |<e^{i phi(x)}>| across truncation scales.
/// At z = 0 the exact value comes from the Gaussian moment; at z != 0 the
/// reweighted estimate is translation averaged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChargeSuppressionPoint {
    pub n_scales: usize,
    pub exact: f64,
    pub mc: Option<EstimatorResult>,
}

#[allow(clippy::too_many_arguments)]
pub fn charge_suppression_scan(
    beta: f64,
    n_scales_list: &[usize],
    z: f64,
    base_sd: &ScaleDecomposition,
    grid: TorusGrid,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ChargeSuppressionPoint>> {
    let mut out = Vec::new();
    for &ns in n_scales_list {
        let sd = ScaleDecomposition::new(base_sd.cov.clone(), ns, base_sd.torus_side)?;
        let rho = ChargeConfig::single((0.0, 0.0), 1.0);
        let exact = charge_moment(&sd, beta, &rho);
        let mc = if z == 0.0 {
            None
        } else {
            Some(charged_one_point(&sd, grid, beta, z, n_samples, seed)?)
        };
        out.push(ChargeSuppressionPoint {
            n_scales: ns,
            exact,
            mc,
        });
    }
    Ok(out)
}

fn charged_one_point(
    sd: &ScaleDecomposition,
    grid: TorusGrid,
    beta: f64,
    z: f64,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorResult> {
    let sampler: MultiscaleSampler = build_multiscale(grid, sd, beta, true)?;
    let per_chain = n_samples / N_CHAINS;
    let splitter = SeedSplitter::new(seed);
    let h2 = grid.spacing * grid.spacing;
    let bins_per_chain = 16usize;
    let per_bin = per_chain / bins_per_chain;

    struct CSums {
        w: f64,
        w2: f64,
        ew: Complex64,
        bins: Vec<(f64, Complex64)>,
    }
    let chains: Vec<CSums> = (0..N_CHAINS)
        .into_par_iter()
        .map(|chain| {
            let mut rng = splitter.stream(chain as u64);
            let mut buf = Vec::new();
            let mut values = vec![0.0; grid.n_points()];
            let mut s = CSums {
                w: 0.0,
                w2: 0.0,
                ew: Complex64::new(0.0, 0.0),
                bins: Vec::new(),
            };
            for _ in 0..bins_per_chain {
                let mut bw = 0.0;
                let mut bew = Complex64::new(0.0, 0.0);
                for _ in 0..per_bin {
                    values.iter_mut().for_each(|v| *v = 0.0);
                    sampler.sample_into(&mut rng, &mut buf, &mut values);
                    let cos_sum: f64 = values.iter().map(|&p| p.cos()).sum();
                    let w = (z * h2 * cos_sum).exp();
                    // translation-averaged charged observable
                    let e_avg: Complex64 = values
                        .iter()
                        .map(|&p| Complex64::new(p.cos(), p.sin()))
                        .sum::<Complex64>()
                        / values.len() as f64;
                    bw += w;
                    s.w2 += w * w;
                    bew += e_avg * w;
                }
                s.w += bw;
                s.ew += bew;
                s.bins.push((bw, bew));
            }
            s
        })
        .collect();

    let n_used = per_bin * bins_per_chain * N_CHAINS;
    let w_tot: f64 = chains.iter().map(|c| c.w).sum();
    let w2_tot: f64 = chains.iter().map(|c| c.w2).sum();
    let ess = w_tot * w_tot / w2_tot;
    if ess < n_used as f64 / 100.0 {
        return Err(Error::ReweightingBreakdown {
            ess,
            n_samples: n_used,
        });
    }
    let ew_tot: Complex64 = chains.iter().map(|c| c.ew).sum();
    let value = (ew_tot / w_tot).norm();
    let mut jk = Vec::new();
    for c in &chains {
        for &(bw, bew) in &c.bins {
            jk.push(((ew_tot - bew) / (w_tot - bw)).norm());
        }
    }
    let nb = jk.len() as f64;
    let mean: f64 = jk.iter().sum::<f64>() / nb;
    let var: f64 = jk.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() * (nb - 1.0) / nb;
    Ok(EstimatorResult {
        name: "charged_one_point".into(),
        value,
        stderr: var.sqrt(),
        n_samples: n_used,
        seed,
        config_digest: String::new(),
        ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{make_kernel, FiniteRangeCovariance, GProfile};
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    fn cov(l: u32) -> FiniteRangeCovariance {
        static K: OnceLock<crate::covariance::RadialKernel> = OnceLock::new();
        let k = K.get_or_init(|| make_kernel(GProfile::ReferenceBump, 1.0 / 256.0).unwrap());
        FiniteRangeCovariance::build(k.clone(), l).unwrap()
    }

    #[test]
    fn fit_recovers_synthetic_power_law() {
        let points: Vec<(f64, f64, f64)> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&r: &f64| (r, 3.7 * r.powf(-2.0), 1e-9))
            .collect();
        let fit = fit_power_law(&points).unwrap();
        assert_abs_diff_eq!(fit.exponent, -2.0, epsilon = 1e-6);
        assert!(fit.exponent_stderr < 1e-6);
        assert!(fit.span_ratio >= 10.0);
    }

    #[test]
    fn fit_rejects_degenerate_designs() {
        let equal: Vec<(f64, f64, f64)> = (0..5).map(|_| (8.0, 0.1, 1e-6)).collect();
        assert!(matches!(
            fit_power_law(&equal),
            Err(Error::DegenerateFit(_))
        ));
        let few = [(4.0, 0.1, 1e-6), (8.0, 0.05, 1e-6)];
        assert!(matches!(fit_power_law(&few), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn fit_excludes_points_consistent_with_zero() {
        let mut points: Vec<(f64, f64, f64)> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&r: &f64| (r, 2.0 * r.powf(-2.0), 1e-9))
            .collect();
        points.push((128.0, 1e-12, 1e-6)); // drowned in noise
        let fit = fit_power_law(&points).unwrap();
        assert_eq!(fit.excluded, vec![128.0]);
        assert_abs_diff_eq!(fit.exponent, -2.0, epsilon = 1e-6);
    }

    #[test]
    fn free_field_estimate_matches_wick_oracle() {
        // z = 0: the MC connected correlator must agree with the exact
        // covariance of the discrete observable within 3 sigma
        let c = cov(4);
        let side = 32.0;
        let grid = TorusGrid::new(32, side).unwrap(); // spacing 1 (coarse allowed)
        let sd = ScaleDecomposition::new(c, 4, side).unwrap();
        let beta = 10.0 * std::f64::consts::PI;
        let a = (3, 5);
        let b = (11, 5);
        let est = truncated_corr(a, b, (0.0, 1.0), (0.0, 1.0), 0.0, beta, &sd, grid, 40_000, 77)
            .unwrap();
        let oracle = free_dipole_covariance(&sd, &grid, beta, a, b, (0.0, 1.0), (0.0, 1.0));
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.stderr,
            "est {} +- {} vs oracle {}",
            est.value,
            est.stderr,
            oracle
        );
    }

    #[test]
    fn coincident_point_variance_is_positive() {
        let c = cov(4);
        let side = 32.0;
        let grid = TorusGrid::new(32, side).unwrap();
        let sd = ScaleDecomposition::new(c, 4, side).unwrap();
        let beta = 10.0 * std::f64::consts::PI;
        let a = (7, 7);
        let oracle = free_dipole_covariance(&sd, &grid, beta, a, a, (1.0, 0.0), (1.0, 0.0));
        assert!(oracle > 0.0);
        let est = truncated_corr(a, a, (1.0, 0.0), (1.0, 0.0), 0.0, beta, &sd, grid, 40_000, 3)
            .unwrap();
        assert!((est.value - oracle).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn swap_symmetry_is_bitwise() {
        let c = cov(4);
        let grid = TorusGrid::new(32, 32.0).unwrap();
        let sd = ScaleDecomposition::new(c, 3, 32.0).unwrap();
        let beta = 4.0;
        let a = (3, 5);
        let b = (11, 9);
        let n1 = (0.6, 0.8);
        let n2 = (1.0, 0.0);
        let e1 =
            truncated_corr(a, b, n1, n2, 0.05, beta, &sd, grid, 8_000, 5).unwrap();
        let e2 =
            truncated_corr(b, a, n2, n1, 0.05, beta, &sd, grid, 8_000, 5).unwrap();
        assert_eq!(e1.value.to_bits(), e2.value.to_bits());
    }

    #[test]
    fn jackknife_stderr_scales_with_samples() {
        let c = cov(4);
        let grid = TorusGrid::new(32, 32.0).unwrap();
        let sd = ScaleDecomposition::new(c, 4, 32.0).unwrap();
        let beta = 10.0 * std::f64::consts::PI;
        let a = (3, 5);
        let b = (11, 5);
        let s_small =
            truncated_corr(a, b, (0.0, 1.0), (0.0, 1.0), 0.0, beta, &sd, grid, 10_000, 13)
                .unwrap()
                .stderr;
        let s_large =
            truncated_corr(a, b, (0.0, 1.0), (0.0, 1.0), 0.0, beta, &sd, grid, 160_000, 13)
                .unwrap()
                .stderr;
        let ratio = s_small / s_large;
        assert!(
            (ratio - 4.0).abs() <= 0.8,
            "stderr ratio {ratio} should be 4 within 20%"
        );
    }

    #[test]
    fn odd_observable_vanishes_under_even_weight() {
        // <n.grad phi> = 0 within 3 sigma: the weight is even under phi -> -phi
        let c = cov(4);
        let grid = TorusGrid::new(32, 32.0).unwrap();
        let sd = ScaleDecomposition::new(c, 3, 32.0).unwrap();
        let splitter = SeedSplitter::new(19);
        let sampler = build_multiscale(grid, &sd, 4.0, true).unwrap();
        let mut rng = splitter.stream(0);
        let mut buf = Vec::new();
        let mut values = vec![0.0; grid.n_points()];
        let z = 0.05;
        let h2 = grid.spacing * grid.spacing;
        let mut sw = 0.0;
        let mut sxw = 0.0;
        let mut sxw2 = 0.0;
        let n_samp = 20_000;
        for _ in 0..n_samp {
            values.iter_mut().for_each(|v| *v = 0.0);
            sampler.sample_into(&mut rng, &mut buf, &mut values);
            let w = (z * h2 * values.iter().map(|&p| p.cos()).sum::<f64>()).exp();
            let x = directional_derivative(&values, &grid, (5, 5), (1.0, 0.0));
            sw += w;
            sxw += x * w;
            sxw2 += (x * w) * (x * w);
        }
        let mean = sxw / sw;
        let sd_est = ((sxw2 / n_samp as f64) / n_samp as f64).sqrt() / (sw / n_samp as f64);
        assert!(mean.abs() <= 3.0 * sd_est, "mean {mean} vs 3 sigma {sd_est}");
    }

    #[test]
    fn ess_guard_triggers_on_violent_reweighting() {
        let c = cov(4);
        let grid = TorusGrid::new(64, 64.0).unwrap();
        let sd = ScaleDecomposition::new(c, 5, 64.0).unwrap();
        let beta = 10.0 * std::f64::consts::PI;
        // z = 0.4 on a 64x64 unit lattice: catastrophic weight variance
        let r = truncated_corr(
            (3, 5),
            (11, 5),
            (0.0, 1.0),
            (0.0, 1.0),
            0.4,
            beta,
            &sd,
            grid,
            4_000,
            3,
        );
        assert!(matches!(r, Err(Error::ReweightingBreakdown { .. })));
    }

    #[test]
    fn charge_suppression_exact_rate() {
        let c = cov(2);
        let side = 16.0;
        let grid = TorusGrid::new(64, side).unwrap();
        let sd = ScaleDecomposition::new(c, 1, side).unwrap();
        let beta = 6.0 * std::f64::consts::PI;
        let points =
            charge_suppression_scan(beta, &[1, 2, 3], 0.0, &sd, grid, 0, 0).unwrap();
        let c0 = sd.cov.c0();
        for w in points.windows(2) {
            let rate = w[1].exact.ln() - w[0].exact.ln();
            assert_abs_diff_eq!(rate, -0.5 * beta * c0, epsilon = 1e-9);
        }
    }

    #[test]
    fn charge_suppression_mc_tracks_exact_rate() {
        let c = cov(2);
        let side = 16.0;
        let grid = TorusGrid::new(64, side).unwrap(); // spacing 1/4
        let sd = ScaleDecomposition::new(c, 1, side).unwrap();
        let beta = 6.0 * std::f64::consts::PI;
        let points =
            charge_suppression_scan(beta, &[1, 2], 0.05, &sd, grid, 40_000, 23).unwrap();
        let c0 = sd.cov.c0();
        let target = -0.5 * beta * c0;
        let m1 = points[0].mc.as_ref().unwrap();
        let m2 = points[1].mc.as_ref().unwrap();
        let rate = m2.value.ln() - m1.value.ln();
        let sigma = (m1.stderr / m1.value).hypot(m2.stderr / m2.value);
        assert!(
            (rate - target).abs() <= 3.0 * sigma + 0.1,
            "rate {rate} vs {target} +- {sigma}"
        );
    }

    #[test]
    fn reweighting_sign_consistency() {
        // with the cos-even weight, z and -z give the same correlator in
        // expectation; check agreement within 3 sigma
        let c = cov(4);
        let grid = TorusGrid::new(32, 32.0).unwrap();
        let sd = ScaleDecomposition::new(c, 3, 32.0).unwrap();
        let beta = 10.0 * std::f64::consts::PI;
        let a = (3, 5);
        let b = (11, 5);
        let ep = truncated_corr(a, b, (0.0, 1.0), (0.0, 1.0), 0.05, beta, &sd, grid, 20_000, 29)
            .unwrap();
        let em = truncated_corr(a, b, (0.0, 1.0), (0.0, 1.0), -0.05, beta, &sd, grid, 20_000, 31)
            .unwrap();
        let sigma = ep.stderr.hypot(em.stderr);
        assert!(
            (ep.value - em.value).abs() <= 3.0 * sigma,
            "{} vs {} +- {}",
            ep.value,
            em.value,
            sigma
        );
    }
}
