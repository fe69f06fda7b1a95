//! Entropic-regularized projection onto the simplex.
//!
//! The program is `min_alpha 0.5 ||U alpha - q||^2 + eps * sum alpha_i log alpha_i`
//! over the probability simplex. The primary solver is exponentiated gradient
//! (entropic mirror descent) run in log space, so iterates stay strictly
//! interior and the entropy gradient stays finite even for weights far below
//! the representable floor. The alternative Frank-Wolfe path screens the
//! support on the unregularized objective, solves the restricted entropic
//! program, extends off-support weights through the stationarity identity,
//! and polishes with a few mirror-descent steps.
//!
//! Both paths terminate on the Frank-Wolfe gap of the *regularized*
//! objective, a single certified stopping rule.

use nalgebra::DVector;
use thiserror::Error;

use crate::dict::{Dictionary, SimplexWeights};
use crate::face::FaceGeometry;
use crate::projection::{ACTIVE_REL_TOL, TIE_REL_TOL};

/// Absolute floor applied to reported weights before logarithms.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    ExponentiatedGradient,
    FrankWolfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    FixedInverseLipschitz,
    LineSearch,
}

#[derive(Debug, Clone)]
pub struct EntropicConfig {
    pub epsilon: f64,
    pub solver: SolverKind,
    pub max_iters: usize,
    pub gap_tol: f64,
    pub step_rule: StepRule,
}

impl EntropicConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            solver: SolverKind::ExponentiatedGradient,
            max_iters: 100_000,
            gap_tol: 1e-10,
            step_rule: StepRule::LineSearch,
        }
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_gap_tol(mut self, gap_tol: f64) -> Self {
        self.gap_tol = gap_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    fn validate(&self) -> Result<(), EntropicError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(EntropicError::BadConfig(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(self.gap_tol > 0.0) {
            return Err(EntropicError::BadConfig(format!(
                "gap_tol must be positive, got {}",
                self.gap_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(EntropicError::BadConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EntropicError {
    #[error("invalid entropic config: {0}")]
    BadConfig(String),
    #[error("invalid prescription input: {0}")]
    BadPrescription(String),
}

/// Solution of the entropic program with its certificate.
#[derive(Debug, Clone)]
pub struct EntropicSolution {
    pub alpha: SimplexWeights,
    pub readout: DVector<f64>,
    pub residual: DVector<f64>,
    /// `mu_eps = -eps * log(alpha)` componentwise.
    pub pseudo_mu: Vec<f64>,
    /// Frank-Wolfe gap of the regularized objective at exit.
    pub dual_gap: f64,
    pub iters: usize,
    pub converged: bool,
    /// Indices whose weights hit the representable floor; their reported
    /// values (and pseudo-multipliers) are clamped, not exact.
    pub saturated: Vec<usize>,
    pub epsilon: f64,
}

/// `-eps * log(alpha)` componentwise, with the weight floor applied.
pub fn pseudo_mu_from(alpha: &[f64], epsilon: f64) -> Vec<f64> {
    alpha
        .iter()
        .map(|&a| -epsilon * a.max(WEIGHT_FLOOR).ln())
        .collect()
}

/// Pseudo-multipliers of a solution (already computed at solve time).
pub fn pseudo_multipliers(sol: &EntropicSolution) -> Vec<f64> {
    sol.pseudo_mu.clone()
}

/// Total entropic mass off the given face: `sum_{j not in face} alpha_j`.
pub fn leakage_mass(sol: &EntropicSolution, face: &[usize]) -> f64 {
    sol.alpha
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(j, _)| !face.contains(j))
        .map(|(_, &a)| a)
        .sum()
}

/// Frank-Wolfe gap of the unregularized objective at `alpha`:
/// `<grad f, alpha> - min_j grad f_j`, an upper bound on suboptimality.
pub fn fw_gap(dict: &Dictionary, q: &DVector<f64>, alpha: &SimplexWeights) -> f64 {
    let grad = dict.atoms().transpose() * (dict.readout(alpha.as_slice()) - q);
    let inner: f64 = grad
        .iter()
        .zip(alpha.as_slice())
        .map(|(g, a)| g * a)
        .sum();
    let min_g = grad.iter().cloned().fold(f64::INFINITY, f64::min);
    inner - min_g
}

fn logsumexp(l: &[f64]) -> f64 {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + l.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Regularized objective evaluated from log-weights.
fn objective_from_log(dict: &Dictionary, q: &DVector<f64>, eps: f64, l: &[f64]) -> f64 {
    let alpha: Vec<f64> = l.iter().map(|x| x.exp()).collect();
    let resid = dict.readout(&alpha) - q;
    // alpha * log alpha written as alpha * l avoids log(0).
    let ent: f64 = alpha.iter().zip(l).map(|(a, li)| a * li).sum();
    0.5 * resid.norm_squared() + eps * ent
}

/// Gradient of the regularized objective and its FW gap, from log-weights.
fn grad_and_gap(dict: &Dictionary, q: &DVector<f64>, eps: f64, l: &[f64]) -> (Vec<f64>, f64) {
    let alpha: Vec<f64> = l.iter().map(|x| x.exp()).collect();
    let quad = dict.atoms().transpose() * (dict.readout(&alpha) - q);
    let grad: Vec<f64> = quad
        .iter()
        .zip(l)
        .map(|(g, li)| g + eps * (1.0 + li))
        .collect();
    let inner: f64 = grad.iter().zip(&alpha).map(|(g, a)| g * a).sum();
    let min_g = grad.iter().cloned().fold(f64::INFINITY, f64::min);
    (grad, inner - min_g)
}

struct EgExit {
    log_weights: Vec<f64>,
    gap: f64,
    iters: usize,
    converged: bool,
}

/// Exponentiated-gradient loop in log space. The multiplicative update
/// `alpha <- alpha * exp(-step * grad) / Z` becomes an affine map on the
/// log-weights whose fixed points are exactly the interior KKT points of
/// the entropic program.
fn eg_loop(
    dict: &Dictionary,
    q: &DVector<f64>,
    eps: f64,
    gap_tol: f64,
    max_iters: usize,
    step_rule: StepRule,
    warm_log: Option<&[f64]>,
) -> EgExit {
    let m = dict.m_count();
    let mut l: Vec<f64> = match warm_log {
        Some(w) => {
            let lse = logsumexp(w);
            w.iter().map(|x| x - lse).collect()
        }
        None => vec![-(m as f64).ln(); m],
    };

    let op2 = dict.operator_norm().powi(2).max(f64::MIN_POSITIVE);
    // Inverse-Lipschitz step. The +eps term keeps the log-space entropy
    // contraction strictly stable for every temperature.
    let base_step = 1.0 / (op2 + eps);
    let mut step = base_step;
    let mut obj = objective_from_log(dict, q, eps, &l);
    let mut exit_iters = max_iters;
    let mut converged = false;

    for iter in 0..max_iters {
        let (grad, gap) = grad_and_gap(dict, q, eps, &l);
        if gap <= gap_tol {
            exit_iters = iter;
            converged = true;
            break;
        }
        match step_rule {
            StepRule::FixedInverseLipschitz => {
                for (li, g) in l.iter_mut().zip(&grad) {
                    *li -= base_step * g;
                }
                let lse = logsumexp(&l);
                for li in l.iter_mut() {
                    *li -= lse;
                }
            }
            StepRule::LineSearch => {
                // Backtracking on the objective. Step growth is capped by
                // the local stability limit of the linearized iteration;
                // past it the objective test cannot reject noise-scale
                // oscillation near the optimum.
                let max_alpha = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
                let stable_cap = 1.8 / (eps + op2 * max_alpha);
                step = step.min(stable_cap).max(base_step);
                let mut accepted = false;
                for _ in 0..40 {
                    let mut trial: Vec<f64> =
                        l.iter().zip(&grad).map(|(li, g)| li - step * g).collect();
                    let lse = logsumexp(&trial);
                    for t in trial.iter_mut() {
                        *t -= lse;
                    }
                    let trial_obj = objective_from_log(dict, q, eps, &trial);
                    if trial_obj <= obj + 1e-15 * obj.abs().max(1.0) {
                        l = trial;
                        obj = trial_obj;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                    if step < base_step {
                        break;
                    }
                }
                if !accepted {
                    for (li, g) in l.iter_mut().zip(&grad) {
                        *li -= base_step * g;
                    }
                    let lse = logsumexp(&l);
                    for li in l.iter_mut() {
                        *li -= lse;
                    }
                    obj = objective_from_log(dict, q, eps, &l);
                    step = base_step;
                } else {
                    step = (step * 1.5).min(stable_cap);
                }
            }
        }
    }

    // Stationarity refinement for far coordinates. The duality gap weighs
    // coordinates by their mass, so weights at or below the gap tolerance
    // can exit with large log errors; the interior stationarity identity
    // log a_j = -(quad_j + nu)/eps - 1 pins them from the converged
    // readout. Their feedback into the gradient is O(alpha_j), so the
    // fixed-point map is a contraction on this block.
    let refine_cutoff = -9.0 * std::f64::consts::LN_10; // alpha < 1e-9
    for _ in 0..3 {
        let alpha: Vec<f64> = l.iter().map(|x| x.exp()).collect();
        let quad = dict.atoms().transpose() * (dict.readout(&alpha) - q);
        let nu: f64 = alpha
            .iter()
            .zip(l.iter().zip(quad.iter()))
            .map(|(&a, (&li, &g))| a * (-g - eps * (1.0 + li)))
            .sum();
        let mut changed = false;
        for (j, li) in l.iter_mut().enumerate() {
            if *li < refine_cutoff {
                let target = -(quad[j] + nu) / eps - 1.0;
                if (target - *li).abs() > 1e-14 * li.abs().max(1.0) {
                    *li = target;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        let lse = logsumexp(&l);
        for li in l.iter_mut() {
            *li -= lse;
        }
    }

    let (_, gap) = grad_and_gap(dict, q, eps, &l);
    EgExit {
        log_weights: l,
        gap,
        iters: exit_iters,
        converged: converged || gap <= gap_tol,
    }
}

fn solution_from_log(
    dict: &Dictionary,
    q: &DVector<f64>,
    eps: f64,
    exit: EgExit,
) -> EntropicSolution {
    let mut saturated = Vec::new();
    let mut alpha: Vec<f64> = exit
        .log_weights
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            let a = li.exp();
            if a < WEIGHT_FLOOR {
                saturated.push(i);
                WEIGHT_FLOOR
            } else {
                a
            }
        })
        .collect();
    let sum: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= sum;
    }
    let readout = dict.readout(&alpha);
    let residual = q - &readout;
    let pseudo_mu = pseudo_mu_from(&alpha, eps);
    EntropicSolution {
        alpha: SimplexWeights::new(alpha, 0.0).expect("entropic weights invalid"),
        readout,
        residual,
        pseudo_mu,
        dual_gap: exit.gap,
        iters: exit.iters,
        converged: exit.converged,
        saturated,
        epsilon: eps,
    }
}

/// Solve the entropic program. Non-convergence returns the best iterate
/// with `converged = false`; weights below the floor are clamped and their
/// indices flagged in `saturated`.
pub fn solve_entropic(
    dict: &Dictionary,
    q: &DVector<f64>,
    config: &EntropicConfig,
) -> Result<EntropicSolution, EntropicError> {
    solve_entropic_warm(dict, q, config, None)
}

/// Same as [`solve_entropic`] with an optional log-weight warm start
/// (used by sweeps over decreasing epsilon grids).
pub fn solve_entropic_warm(
    dict: &Dictionary,
    q: &DVector<f64>,
    config: &EntropicConfig,
    warm_log: Option<&[f64]>,
) -> Result<EntropicSolution, EntropicError> {
    config.validate()?;
    for (i, x) in q.iter().enumerate() {
        if !x.is_finite() {
            return Err(EntropicError::BadConfig(format!(
                "non-finite query entry at coordinate {i}"
            )));
        }
    }
    let eps = config.epsilon;
    match config.solver {
        SolverKind::ExponentiatedGradient => {
            let exit = eg_loop(
                dict,
                q,
                eps,
                config.gap_tol,
                config.max_iters,
                config.step_rule,
                warm_log,
            );
            Ok(solution_from_log(dict, q, eps, exit))
        }
        SolverKind::FrankWolfe => {
            let budget = config.max_iters;
            let screen_tol = (eps * eps / (1.0 + dict.operator_norm().powi(2))).max(1e-13);
            let trace = fw_solve_traced(dict, q, screen_tol, budget / 2, false);
            let fw_iters = trace.gaps.len();

            // Support from the final iterate plus gradient ties.
            let alpha_t = &trace.final_alpha;
            let grad = dict.atoms().transpose() * (dict.readout(alpha_t) - q);
            let max_a = alpha_t.iter().cloned().fold(0.0f64, f64::max);
            let min_g = grad.iter().cloned().fold(f64::INFINITY, f64::min);
            let g_scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let mut support: Vec<usize> = (0..dict.m_count())
                .filter(|&i| {
                    alpha_t[i] > ACTIVE_REL_TOL * max_a
                        || grad[i] <= min_g + TIE_REL_TOL * g_scale
                })
                .collect();
            support.sort_unstable();

            // Restricted entropic solve on the screened support.
            let sub_rows: Vec<Vec<f64>> = support
                .iter()
                .map(|&i| dict.atom(i).iter().copied().collect())
                .collect();
            let sub = Dictionary::from_rows(&sub_rows).expect("support is nonempty");
            let sub_exit = eg_loop(
                &sub,
                q,
                eps,
                config.gap_tol,
                budget / 2,
                config.step_rule,
                None,
            );

            // Tilt-extend: off-support log-weights from the stationarity
            // identity log a_j = -(quad_j + nu)/eps - 1 at the restricted
            // solution, then polish on the full problem.
            let sub_alpha: Vec<f64> = sub_exit.log_weights.iter().map(|x| x.exp()).collect();
            let mut alpha_full = vec![0.0; dict.m_count()];
            for (&idx, &a) in support.iter().zip(&sub_alpha) {
                alpha_full[idx] = a;
            }
            let quad = dict.atoms().transpose() * (dict.readout(&alpha_full) - q);
            let nu = support
                .iter()
                .zip(&sub_exit.log_weights)
                .map(|(&idx, &li)| -quad[idx] - eps * (1.0 + li))
                .sum::<f64>()
                / support.len() as f64;
            let mut l_full = vec![0.0; dict.m_count()];
            for j in 0..dict.m_count() {
                l_full[j] = match support.iter().position(|&s| s == j) {
                    Some(p) => sub_exit.log_weights[p],
                    None => -(quad[j] + nu) / eps - 1.0,
                };
            }
            let lse = logsumexp(&l_full);
            for li in l_full.iter_mut() {
                *li -= lse;
            }

            let polish = eg_loop(
                dict,
                q,
                eps,
                config.gap_tol,
                budget,
                config.step_rule,
                Some(&l_full),
            );
            let iters = fw_iters + sub_exit.iters + polish.iters;
            let exit = EgExit {
                log_weights: polish.log_weights,
                gap: polish.gap,
                iters,
                converged: polish.converged,
            };
            Ok(solution_from_log(dict, q, eps, exit))
        }
    }
}

/// Solve along a descending epsilon grid, warm-starting each solve from the
/// previous log-weights.
pub fn solve_entropic_sweep(
    dict: &Dictionary,
    q: &DVector<f64>,
    base: &EntropicConfig,
    eps_grid: &[f64],
) -> Result<Vec<EntropicSolution>, EntropicError> {
    let mut out = Vec::with_capacity(eps_grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &eps in eps_grid {
        let cfg = EntropicConfig {
            epsilon: eps,
            ..base.clone()
        };
        let sol = solve_entropic_warm(dict, q, &cfg, warm.as_deref())?;
        warm = Some(
            sol.alpha
                .as_slice()
                .iter()
                .map(|&a| a.max(WEIGHT_FLOOR).ln())
                .collect(),
        );
        out.push(sol);
    }
    Ok(out)
}

/// Frank-Wolfe iterate trace on the unregularized objective.
pub struct FwTrace {
    /// Iterates recorded before each update (only when `record` is set).
    pub alphas: Vec<Vec<f64>>,
    /// FW gap at each recorded iterate.
    pub gaps: Vec<f64>,
    pub final_alpha: Vec<f64>,
    pub final_gap: f64,
}

/// Run Frank-Wolfe with exact line search on `0.5||U alpha - q||^2`,
/// stopping once the duality gap falls below `stop_gap`.
pub fn fw_solve_traced(
    dict: &Dictionary,
    q: &DVector<f64>,
    stop_gap: f64,
    max_iters: usize,
    record: bool,
) -> FwTrace {
    let m = dict.m_count();
    // Seed at the nearest vertex.
    let mut seed = 0usize;
    let mut best = f64::INFINITY;
    for j in 0..m {
        let dist = (dict.atom(j) - q).norm_squared();
        if dist < best {
            best = dist;
            seed = j;
        }
    }
    let mut alpha = vec![0.0; m];
    alpha[seed] = 1.0;
    let mut alphas = Vec::new();
    let mut gaps = Vec::new();
    let mut final_gap = f64::INFINITY;

    for _ in 0..max_iters {
        let readout = dict.readout(&alpha);
        let grad = dict.atoms().transpose() * (&readout - q);
        let mut jstar = 0usize;
        let mut min_g = f64::INFINITY;
        for j in 0..m {
            if grad[j] < min_g {
                min_g = grad[j];
                jstar = j;
            }
        }
        let inner: f64 = grad.iter().zip(&alpha).map(|(g, a)| g * a).sum();
        let gap = inner - min_g;
        if record {
            alphas.push(alpha.clone());
        }
        gaps.push(gap);
        final_gap = gap;
        if gap <= stop_gap {
            break;
        }
        // Exact line search toward the vertex.
        let dir_readout = dict.atom(jstar) - &readout;
        let denom = dir_readout.norm_squared();
        if denom <= 0.0 {
            break;
        }
        let gamma = (gap / denom).clamp(0.0, 1.0);
        for a in alpha.iter_mut() {
            *a *= 1.0 - gamma;
        }
        alpha[jstar] += gamma;
    }

    FwTrace {
        alphas,
        gaps,
        final_alpha: alpha,
        final_gap,
    }
}

/// Gap-to-distance certificate from Frank-Wolfe duality.
#[derive(Debug, Clone)]
pub struct FwCertificate {
    pub gap: f64,
    /// Smallest eigenvalue of the face-tangent restriction of `U^T U`.
    pub mu_face: f64,
    /// `sqrt(2 gap / mu_face)`, dominating `||alpha - alpha*||` on-face.
    pub distance_bound: f64,
    /// `||U||_op * distance_bound`.
    pub readout_bound: f64,
    /// False when the face is degenerate or `alpha` is not supported on it.
    pub valid: bool,
}

/// Certificate for an iterate supported (within tolerance) on the given face.
pub fn fw_certificate(
    dict: &Dictionary,
    q: &DVector<f64>,
    alpha: &SimplexWeights,
    face: &FaceGeometry,
) -> FwCertificate {
    let off_mass: f64 = alpha
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(j, _)| !face.face_indices.contains(j))
        .map(|(_, &a)| a)
        .sum();
    let mu_face = crate::face::face_tangent_mu(dict, &face.face_indices);
    let gap = fw_gap(dict, q, alpha).max(0.0);
    let mut valid = off_mass <= 1e-8;
    let distance_bound = if mu_face.is_infinite() {
        0.0
    } else if mu_face <= 0.0 {
        valid = false;
        f64::INFINITY
    } else {
        (2.0 * gap / mu_face).sqrt()
    };
    FwCertificate {
        gap,
        mu_face,
        distance_bound,
        readout_bound: dict.operator_norm() * distance_bound,
        valid,
    }
}

/// Epsilon prescribed for a target readout tolerance `eta`:
/// `min(eta / (2 C_lin), gap / (2 log(2 C_exp / eta)))`. When the log
/// argument is at most `e` the exponential requirement is vacuous and only
/// the linear branch binds.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonPrescription {
    pub epsilon: f64,
    pub linear_branch: f64,
    pub exp_branch: Option<f64>,
    pub exponential_vacuous: bool,
}

pub fn prescribe_epsilon(
    c_lin: f64,
    c_exp: f64,
    gap: f64,
    eta: f64,
) -> Result<EpsilonPrescription, EntropicError> {
    for (name, v) in [("c_lin", c_lin), ("c_exp", c_exp), ("gap", gap), ("eta", eta)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(EntropicError::BadPrescription(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    let linear_branch = eta / (2.0 * c_lin);
    let arg = 2.0 * c_exp / eta;
    if arg <= std::f64::consts::E {
        return Ok(EpsilonPrescription {
            epsilon: linear_branch,
            linear_branch,
            exp_branch: None,
            exponential_vacuous: true,
        });
    }
    let exp_branch = gap / (2.0 * arg.ln());
    Ok(EpsilonPrescription {
        epsilon: linear_branch.min(exp_branch),
        linear_branch,
        exp_branch: Some(exp_branch),
        exponential_vacuous: false,
    })
}

/// Operating heuristic for a target leakage level `delta`:
/// `eps <= gap / (c * log(off_count / delta))`.
pub fn epsilon_for_target_leakage(gap: f64, off_count: usize, delta: f64, c: f64) -> f64 {
    if off_count == 0 {
        return f64::INFINITY;
    }
    let ratio = off_count as f64 / delta;
    if ratio <= 1.0 {
        return f64::INFINITY;
    }
    gap / (c * ratio.ln())
}

/// Closed-form softmax weights at temperature `eps`, the entropic solution
/// of the linearized objective `-<s, alpha>`.
pub fn softmax_weights(scores: &[f64], eps: f64) -> Vec<f64> {
    let max_s = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| ((s - max_s) / eps).exp()).collect();
    let z: f64 = w.iter().sum();
    for wi in w.iter_mut() {
        *wi /= z;
    }
    w
}

/// Scalar oracle for two-atom instances: solves the stationarity condition
/// `<y(t) - q, u2 - u1> + eps log(t / (1 - t)) = 0` for
/// `y(t) = u1 + t (u2 - u1)`. Bisection runs on the logit
/// `u = log(t / (1 - t))`, where the left side is strictly increasing and
/// roots arbitrarily close to the simplex boundary stay resolvable.
pub fn two_atom_entropic_oracle(
    u1: &DVector<f64>,
    u2: &DVector<f64>,
    q: &DVector<f64>,
    eps: f64,
) -> (f64, [f64; 2]) {
    let dir = u2 - u1;
    let t_of = |u: f64| 1.0 / (1.0 + (-u).exp());
    let station = |u: f64| -> f64 {
        let y = u1 + &dir * t_of(u);
        (y - q).dot(&dir) + eps * u
    };
    let (mut lo, mut hi) = (-744.0f64, 744.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if station(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let t = t_of(u);
    // The complementary weight computed stably from the logit.
    let s = 1.0 / (1.0 + u.exp());
    (t, [s, t])
}
