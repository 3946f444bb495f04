use sgrg::covariance::*;
use sgrg::gaussian::v_periodized;
use sgrg::grid::TorusGrid;
use sgrg::mc::free_dipole_covariance;

fn main() {
    let k = make_kernel(GProfile::ReferenceBump, 1.0 / 256.0).unwrap();
    let beta = 10.0 * std::f64::consts::PI;
    for (l, ns, side, pts) in [(4u32, 5usize, 64.0, 64usize), (4, 5, 32.0, 64)] {
        let cov = FiniteRangeCovariance::build(k.clone(), l).unwrap();
        let sd = ScaleDecomposition::new(cov, ns, side).unwrap();
        let grid = TorusGrid::new(pts, side).unwrap();
        let h = grid.spacing;
        println!("side {side}, spacing {h}:");
        let mut pts_fit = Vec::new();
        for rr in [4.0f64, 5.0, 6.0, 8.0, 11.0, 16.0] {
            if rr > side / 4.0 { continue; }
            let nodes = (rr / h).round() as usize;
            let a = (0usize, 0usize);
            let b = (nodes, 0usize);
            let o = free_dipole_covariance(&sd, &grid, beta, a, b, (0.0, 1.0), (0.0, 1.0));
            // continuum-ish comparison: transverse Hessian of periodized v
            let eps = 1e-4;
            let vpp = (v_periodized(&sd, (rr, eps)) - 2.0 * v_periodized(&sd, (rr, 0.0))
                + v_periodized(&sd, (rr, -eps))) / (eps * eps);
            println!("  r={rr:5}: oracle {o:+.6e}  -beta*d2v {:+.6e}", -beta * vpp);
            pts_fit.push((rr, o, 1e-12));
        }
        let fit = sgrg::mc::fit_power_law(&pts_fit).unwrap();
        println!("  oracle slope = {:+.4}", fit.exponent);
    }
}
