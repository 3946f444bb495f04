//! The bound-level RG dynamical system: contraction factors, charged-sector
//! sums, coupling schedules, the sigma/K flow with its quadratic remainder,
//! stable-manifold tuning of sigma_0 by shooting, the pinned delta-K flow,
//! and the correlation ledger assembling the decay bound.
//!
//! The flow is a declared surrogate for the functional RG: one expanding
//! direction (sigma, eigenvalue 2 in rescaled variables), a contracting rest
//! with factor delta = max(L^-2, L^{2-beta/4pi}), and a quadratic remainder
//! controlled by the schedule delta-kappa_j. The model constants live in
//! `FlowParams` and every claim is about this surrogate system.

use crate::error::{Error, Result};
use crate::polymers::{enumerate_connected, BlockTorus};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowParams {
    pub l_scale: u32,
    pub beta: f64,
    /// kappa_0 = h_inf^{-2}
    pub kappa0: f64,
    pub h_inf: f64,
    /// ball radius of the tuning theorem
    pub epsilon: f64,
    /// decay-exponent slack in (0, 1)
    pub epsilon0: f64,
    /// set-regulator base
    pub a_regulator: f64,
    /// |alpha_j(K)| <= c_alpha ||K||
    pub c_alpha: f64,
    /// quadratic remainder scale
    pub c_g: f64,
    /// energy accumulation scale
    pub c_energy: f64,
    /// O(1) of the charged-sector bound (recorded empirical maximum)
    pub c_charged: f64,
    /// pinned reblocking constant of the delta-K flow
    pub c_pin: f64,
    /// quadratic remainder scale of the delta-K flow
    pub c_dk2: f64,
    /// Cauchy-bound constant T_j <= c_t lambda0^{-2} dk_j
    pub c_t: f64,
    pub lambda0: f64,
    /// activity scale entering C_lambda; must satisfy z e^{2h}/lambda0 = O(1)
    pub z_activity: f64,
}

impl FlowParams {
    pub fn defaults(l_scale: u32, beta: f64) -> Self {
        let h_inf = 4.0;
        let lambda0 = 1e-2;
        Self {
            l_scale,
            beta,
            kappa0: 1.0 / (h_inf * h_inf),
            h_inf,
            epsilon: 1e-3,
            epsilon0: 0.1,
            a_regulator: 2.0,
            c_alpha: 1.0,
            c_g: 1.0,
            c_energy: 1.0,
            c_charged: 16.0,
            c_pin: 1.1,
            c_dk2: 0.1,
            c_t: 1.0,
            lambda0,
            z_activity: lambda0 * (-2.0 * h_inf).exp(),
        }
    }

    pub fn dipole_phase(&self) -> bool {
        self.beta / (4.0 * PI) > 2.0
    }
}

/// Per-scale schedule values (kappa_j, h_j, delta-kappa_j).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kappa: f64,
    pub h: f64,
    pub delta_kappa: f64,
}

/// kappa_j = kappa_0 (2 - 2^-j), h_j = h_inf (1 + 2^-j),
/// delta-kappa_j = 2^{-j-1} kappa_0.
pub fn schedules(params: &FlowParams, j: u32) -> Schedule {
    let p = 2f64.powi(-(j as i32));
    Schedule {
        kappa: params.kappa0 * (2.0 - p),
        h: params.h_inf * (1.0 + p),
        delta_kappa: 0.5 * p * params.kappa0,
    }
}

/// delta = max(L^-2, L^{2 - beta/4pi}); at beta <= 8pi this is >= 1 for
/// large L and the returned flag records the lost contraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub delta: f64,
    pub contracts: bool,
}

pub fn contraction_delta(l_scale: u32, beta: f64) -> Contraction {
    let l = l_scale as f64;
    let delta = l.powi(-2).max(l.powf(2.0 - beta / (4.0 * PI)));
    Contraction {
        delta,
        contracts: delta < 1.0,
    }
}

/// Closed-form charged-sector sum
/// sum_{q != 0} exp(-|q| (beta C(0) - 2 N_C) + beta C(0)/2) with
/// C(0) = log(L)/(2 pi).
pub fn charged_sector_sum(l_scale: u32, beta: f64, n_c: f64) -> Result<f64> {
    let c0 = (l_scale as f64).ln() / (2.0 * PI);
    let rate = beta * c0 - 2.0 * n_c;
    if rate <= 0.0 {
        return Err(Error::ChargedSectorDivergent {
            beta_c0: beta * c0,
            two_nc: 2.0 * n_c,
        });
    }
    // 2 e^{beta C0/2} e^{-rate} / (1 - e^{-rate}), folded to avoid overflow
    let x = (-rate).exp();
    Ok(2.0 * (2.0 * n_c - beta * c0 / 2.0).exp() / (1.0 - x))
}

/// Flow state at scale j.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub j: u32,
    pub sigma: f64,
    pub k: f64,
    pub energy: f64,
}

impl FlowState {
    pub fn initial(sigma0: f64, k0: f64) -> Self {
        Self {
            j: 0,
            sigma: sigma0,
            k: k0,
            energy: 0.0,
        }
    }

    /// Inside the shrinking ball |sigma_j| <= 2^-j eps, k_j <= 2^-j eps.
    pub fn in_ball(&self, epsilon: f64) -> bool {
        let r = 2f64.powi(-(self.j as i32)) * epsilon;
        self.sigma.abs() <= r && self.k <= r
    }
}

/// One step of the surrogate flow:
/// sigma' = sigma + c_alpha k,
/// k'     = delta k + c_g L^2 (k + |sigma|/delta-kappa_j)^2,
/// E'     = E + c_E L^2 (k + |sigma|).
pub fn flow_step(state: &FlowState, params: &FlowParams) -> FlowState {
    let delta = contraction_delta(params.l_scale, params.beta).delta;
    let l2 = (params.l_scale as f64).powi(2);
    let sched = schedules(params, state.j);
    let drive = state.k + state.sigma.abs() / sched.delta_kappa;
    FlowState {
        j: state.j + 1,
        sigma: state.sigma + params.c_alpha * state.k,
        k: delta * state.k + params.c_g * l2 * drive * drive,
        energy: state.energy + params.c_energy * l2 * (state.k + state.sigma.abs()),
    }
}

/// A trajectory with its first ball-violation index, if any.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<FlowState>,
    pub escaped_at: Option<u32>,
    /// sign of sigma at escape (drives the bisection)
    pub escape_sign: f64,
}

pub fn run_flow(sigma0: f64, k0: f64, params: &FlowParams, j_max: u32) -> Trajectory {
    let mut states = vec![FlowState::initial(sigma0, k0)];
    let mut escaped_at = None;
    let mut escape_sign = 0.0;
    for _ in 0..j_max {
        let next = flow_step(states.last().unwrap(), params);
        if escaped_at.is_none() && !next.in_ball(params.epsilon) {
            escaped_at = Some(next.j);
            escape_sign = if next.sigma >= 0.0 { 1.0 } else { -1.0 };
            states.push(next);
            break;
        }
        states.push(next);
    }
    Trajectory {
        states,
        escaped_at,
        escape_sign,
    }
}

/// One step of the flow in the rescaled variables sigma~_j = 2^j sigma_j,
/// k~_j = 2^j k_j of the stable-manifold argument: the sigma direction
/// expands with eigenvalue exactly 2, the k direction contracts with 2 delta,
/// and the quadratic remainder picks up an extra 2^-j suppression:
///   sigma~' = 2 sigma~ + 2 c_alpha k~
///   k~'     = 2 delta k~ + c_g L^2 2^{1-j} (k~ + 2 |sigma~| / kappa0)^2.
pub fn flow_step_rescaled(sigma_t: f64, k_t: f64, j: u32, params: &FlowParams) -> (f64, f64) {
    let delta = contraction_delta(params.l_scale, params.beta).delta;
    let l2 = (params.l_scale as f64).powi(2);
    let drive = k_t + 2.0 * sigma_t.abs() / params.kappa0;
    (
        2.0 * sigma_t + 2.0 * params.c_alpha * k_t,
        2.0 * delta * k_t + params.c_g * l2 * 2f64.powi(1 - j as i32) * drive * drive,
    )
}

/// Escape diagnostics of a rescaled trajectory within the fixed ball
/// max(|sigma~|, k~) <= eps.
pub fn run_flow_rescaled(
    sigma0: f64,
    k0: f64,
    params: &FlowParams,
    j_max: u32,
) -> (Option<u32>, f64) {
    let (mut s, mut k) = (sigma0, k0);
    for j in 0..j_max {
        let (sn, kn) = flow_step_rescaled(s, k, j, params);
        s = sn;
        k = kn;
        if s.abs() > params.epsilon || k > params.epsilon {
            return (Some(j + 1), s);
        }
    }
    (None, s)
}

/// Shooting report: bracket history and the tuned sigma_0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningReport {
    pub sigma0_star: f64,
    pub bracket_history: Vec<(f64, f64)>,
    pub iterations: u32,
    /// escape index of the two final bracket endpoints (diagnostics)
    pub escape_lo: Option<u32>,
    pub escape_hi: Option<u32>,
}

/// Bisection shooting for the stable-manifold initial coupling, run in the
/// rescaled variables where trajectories below the manifold escape with
/// sigma~ -> -inf and above with sigma~ -> +inf. Brackets widen
/// geometrically until the escape signs differ.
pub fn tune_sigma0(k0: f64, params: &FlowParams, j_max: u32, tol: f64) -> Result<TuningReport> {
    if k0 == 0.0 {
        return Ok(TuningReport {
            sigma0_star: 0.0,
            bracket_history: vec![(0.0, 0.0)],
            iterations: 0,
            escape_lo: None,
            escape_hi: None,
        });
    }
    let shoot = |sigma0: f64| -> f64 {
        let (_, sigma_escape) = run_flow_rescaled(sigma0, k0, params, j_max);
        if sigma_escape >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    let mut lo = -k0.abs().max(1e-15);
    let mut hi = k0.abs().max(1e-15);
    let mut widen = 0;
    while shoot(lo) >= 0.0 || shoot(hi) <= 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        widen += 1;
        if widen > 60 {
            return Err(Error::Bracket { lo, hi });
        }
    }
    let mut history = vec![(lo, hi)];
    let mut iters = 0u32;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if shoot(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        history.push((lo, hi));
        iters += 1;
        if iters > 200 {
            break;
        }
    }
    let sigma0_star = 0.5 * (lo + hi);
    let (escape_lo, _) = run_flow_rescaled(lo, k0, params, j_max);
    let (escape_hi, _) = run_flow_rescaled(hi, k0, params, j_max);
    Ok(TuningReport {
        sigma0_star,
        bracket_history: history,
        iterations: iters,
        escape_lo,
        escape_hi,
    })
}

/// The stable-manifold trajectory computed by the backward-stable tail
/// iteration: sigma_j = -c_alpha sum_{i >= j} k_i makes sigma_{j+1} =
/// sigma_j + c_alpha k_j exact by construction, and the k recursion is
/// iterated to a fixed point. Forward iteration from a bisected sigma_0
/// cannot track the manifold below the f64 bisection floor; the tail sums
/// evaluate the same trajectory with per-scale relative accuracy.
pub fn stable_trajectory(k0: f64, params: &FlowParams, j_max: u32) -> Result<Vec<FlowState>> {
    let delta = contraction_delta(params.l_scale, params.beta).delta;
    let l2 = (params.l_scale as f64).powi(2);
    let n = j_max as usize + 1;
    let mut k = vec![0.0f64; n];
    let mut sigma = vec![0.0f64; n];
    k[0] = k0;
    for _ in 0..60 {
        // forward k with the current sigma sequence
        for j in 0..n - 1 {
            let sched = schedules(params, j as u32);
            let drive = k[j] + sigma[j].abs() / sched.delta_kappa;
            k[j + 1] = delta * k[j] + params.c_g * l2 * drive * drive;
            if !k[j + 1].is_finite() || k[j + 1] > params.epsilon {
                return Err(Error::Config(format!(
                    "k0 = {k0:.3e} leaves the contraction basin at scale {}",
                    j + 1
                )));
            }
        }
        // backward sigma from the tail sums: sigma_j = -c_alpha sum_{i>=j} k_i,
        // with the geometric tail beyond j_max folded in
        let mut acc = params.c_alpha * k[n - 1] * delta / (1.0 - delta);
        let mut new_sigma = vec![0.0f64; n];
        for j in (0..n).rev() {
            acc += params.c_alpha * k[j];
            new_sigma[j] = -acc;
        }
        let moved = sigma
            .iter()
            .zip(&new_sigma)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        sigma = new_sigma;
        if moved < 1e-18 * params.epsilon {
            break;
        }
    }
    let mut energy = 0.0;
    Ok((0..n)
        .map(|j| {
            let s = FlowState {
                j: j as u32,
                sigma: sigma[j],
                k: k[j],
                energy,
            };
            energy += params.c_energy * l2 * (k[j] + sigma[j].abs());
            s
        })
        .collect())
}

/// delta-K flow: dk_{j+1} = factor * dk_j + c_dk2 * dk_j^2, with the pinned
/// reblocking factor c_pin max(L^-2, L^{-beta/4pi}) or the unpinned
/// c_pin max(1, L^{2-beta/4pi}).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaKFlow {
    pub dk: Vec<f64>,
    /// first j where dk_j > L^{-2(1-eps0) j} eps-prime, if any
    pub first_violation: Option<u32>,
    pub eps_prime: f64,
}

pub fn delta_k_flow(
    dk0: f64,
    params: &FlowParams,
    j_max: u32,
    pinned: bool,
    linear_only: bool,
) -> DeltaKFlow {
    let l = params.l_scale as f64;
    let per_step = if pinned {
        params.c_pin * l.powi(-2).max(l.powf(-params.beta / (4.0 * PI)))
    } else {
        params.c_pin * 1f64.max(l.powf(2.0 - params.beta / (4.0 * PI)))
    };
    let eps_prime = eps_prime(params);
    // the Cauchy-bound remainder contracts with the same per-scale rate and
    // is quadratic in dk relative to the analyticity radius eps'
    let quad_rate = l.powf(-2.0 * (1.0 - params.epsilon0));
    let mut dk = vec![dk0];
    let mut first_violation = None;
    for j in 0..j_max {
        let prev = dk[j as usize];
        let mut next = per_step * prev;
        if !linear_only {
            next += params.c_dk2 * quad_rate * prev * prev / eps_prime;
        }
        dk.push(next);
        let bound = l.powf(-2.0 * (1.0 - params.epsilon0) * (j + 1) as f64) * eps_prime;
        if first_violation.is_none() && next > bound {
            first_violation = Some(j + 1);
        }
    }
    DeltaKFlow {
        dk,
        first_violation,
        eps_prime,
    }
}

/// eps' = max(eps, C_lambda) with C_lambda = lambda0 exp(h + |z| lambda0^-1 e^{2h})
/// evaluated at the schedule's h_inf and the configured activity scale.
pub fn eps_prime(params: &FlowParams) -> f64 {
    let c_lambda = params.lambda0
        * (params.h_inf + params.z_activity / params.lambda0 * (2.0 * params.h_inf).exp()).exp();
    params.epsilon.max(c_lambda)
}

/// Scale-by-scale contributions to the truncated dipole correlation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationLedger {
    pub separation: f64,
    /// L^I <= |a-b| < L^{I+1}
    pub i_scale: u32,
    pub contributions: Vec<f64>,
    pub total: f64,
    /// total / (eps' |a-b|^{-2(1-eps0)})
    pub bound_ratio: f64,
}

/// Assemble the ledger: T_j = 0 for j < I is checked combinatorially (no
/// small set on the scaled torus contains both dipole blocks); for j >= I
/// the Cauchy bound T_j <= c_t lambda0^-2 dk_j applies.
pub fn correlation_bound(
    separation: f64,
    params: &FlowParams,
    dk: &DeltaKFlow,
) -> Result<CorrelationLedger> {
    if separation < 1.0 {
        return Err(Error::Config("separation must be >= 1".into()));
    }
    let l = params.l_scale as f64;
    let i_scale = separation.ln() / l.ln();
    let i_scale = i_scale.floor() as u32;

    let mut contributions = Vec::new();
    for (j, &dkj) in dk.dk.iter().enumerate() {
        let j = j as u32;
        let blocked = small_sets_cannot_join(separation, l, j);
        let t_j = if blocked {
            0.0
        } else {
            params.c_t / (params.lambda0 * params.lambda0) * dkj
        };
        if j < i_scale && !blocked {
            // the geometric obstruction must cover every scale below I
            return Err(Error::Config(format!(
                "scaled separation {} at j = {j} admits a joint small set below I = {i_scale}",
                separation / l.powi(j as i32)
            )));
        }
        contributions.push(t_j);
    }
    let total: f64 = contributions.iter().sum();
    let bound_ratio =
        total / (dk.eps_prime * separation.powf(-2.0 * (1.0 - params.epsilon0)));
    Ok(CorrelationLedger {
        separation,
        i_scale,
        contributions,
        total,
        bound_ratio,
    })
}

/// Combinatorial check: on the scale-j block torus, is there no connected
/// <= 4-block set containing the blocks of both dipoles? The dipoles sit at
/// (0,0) and (d_j, 0) with d_j the rescaled separation.
pub fn small_sets_cannot_join(separation: f64, l: f64, j: u32) -> bool {
    let d_j = separation / l.powi(j as i32);
    // enumeration needs a torus comfortably holding the small sets
    let side = 16usize;
    let torus = BlockTorus::new(side).unwrap();
    if d_j >= (side / 2) as f64 {
        return true; // beyond any small set's reach at desk scale
    }
    let block_a = (2, 2);
    let block_b = ((2 + d_j.floor() as i32) % side as i32, 2);
    if block_a == block_b {
        return false;
    }
    for p in enumerate_connected(&torus, block_a, 4) {
        if p.small && p.contains(block_b) {
            return false;
        }
    }
    true
}


/// Recorded O(1) constant for the ledger bound ratio across separations
/// (measured on the shipped defaults, stored with margin).
pub const BOUND_RATIO_O1: f64 = 2e4;
