//! Adaptive Gauss-Kronrod quadrature on panels.

/// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
const KRONROD_NODES: [f64; 15] = [
    -0.991455371120813,
    -0.949107912342759,
    -0.864864423359769,
    -0.741531185599394,
    -0.586087235467691,
    -0.405845151377397,
    -0.207784955007898,
    0.0,
    0.207784955007898,
    0.405845151377397,
    0.586087235467691,
    0.741531185599394,
    0.864864423359769,
    0.949107912342759,
    0.991455371120813,
];

const KRONROD_WEIGHTS: [f64; 15] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
    0.204432940075298,
    0.190350578064785,
    0.169004726639267,
    0.140653259715525,
    0.104790010322250,
    0.063092092629979,
    0.022935322010529,
];

const GAUSS_WEIGHTS: [f64; 7] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
    0.381830050505119,
    0.279705391489277,
    0.129484966168870,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in KRONROD_NODES.iter().zip(&KRONROD_WEIGHTS).enumerate() {
        let v = f(mid + half * x);
        kronrod += wk * v;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * v;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Integrate `f` over [a, b] to absolute tolerance `tol` by adaptive panel bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let mut total = 0.0;
    // worklist of (lo, hi, tol) panels
    let mut stack = vec![(a, b, tol)];
    let mut depth_guard = 0usize;
    while let Some((lo, hi, t)) = stack.pop() {
        depth_guard += 1;
        let (val, err) = gk15(&f, lo, hi);
        if err <= t || hi - lo < 1e-14 * (b - a) || depth_guard > 100_000 {
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t));
            stack.push((mid, hi, 0.5 * t));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_log_kernel() {
        // int_1^L dl/l = log L
        for l in [2.0, 8.0, 32.0] {
            let v = integrate(|x| 1.0 / x, 1.0, l, 1e-10);
            assert_abs_diff_eq!(v, l.ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn integrates_smooth_bump() {
        // int_0^1 x^3 (1-x)^3 dx = 1/140
        let v = integrate(|x| x.powi(3) * (1.0 - x).powi(3), 0.0, 1.0, 1e-12);
        assert_abs_diff_eq!(v, 1.0 / 140.0, epsilon = 1e-12);
    }
}
