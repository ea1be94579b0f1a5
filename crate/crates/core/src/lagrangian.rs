//! Primal-dual baseline on `L(θ, λ) = J(θ) + λ(D(θ) - D0)`: gradient descent
//! in `θ`, projected gradient ascent in `λ`.

use crate::mat::Vector;
use crate::rng;
use crate::sca::{Aborted, ConstrainedOracle, IterateLog, IterateRecord, OracleSample, DEFAULT_BOX_HALF_WIDTH};
use crate::subproblem::{Bounds, SolveStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub theta: Vector,
    pub lambda: f64,
    pub eta_theta: f64,
    pub eta_lambda: f64,
}

/// One simultaneous primal-dual update using the step sizes stored in `state`.
pub fn primal_dual_step(state: &LagrangianState, sample: &OracleSample, d0: f64) -> LagrangianState {
    let direction = &sample.j_grad + &sample.d_grad * state.lambda;
    LagrangianState {
        theta: &state.theta - direction * state.eta_theta,
        lambda: (state.lambda + state.eta_lambda * (sample.d_value - d0)).max(0.0),
        eta_theta: state.eta_theta,
        eta_lambda: state.eta_lambda,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianConfig {
    pub eta_theta: f64,
    pub eta_lambda: f64,
    /// Scale both step sizes by `1/√k` at iteration `k`.
    pub decay: bool,
    pub lambda0: f64,
    pub max_iter: usize,
    pub bounds: Option<Bounds>,
    pub seed: u64,
    pub feas_tol: f64,
    pub n_traj: usize,
}

impl Default for LagrangianConfig {
    fn default() -> Self {
        Self {
            eta_theta: 1e-3,
            eta_lambda: 1e-3,
            decay: true,
            lambda0: 0.0,
            max_iter: 1000,
            bounds: None,
            seed: 0,
            feas_tol: 0.0,
            n_traj: 1,
        }
    }
}

impl LagrangianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_theta > 0.0 && self.eta_lambda > 0.0) {
            return Err(Error::InvalidConfig("primal-dual step sizes must be positive".into()));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(Error::InvalidConfig("initial multiplier must be nonnegative".into()));
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidConfig("n_traj must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_sizes(&self, k: usize) -> (f64, f64) {
        let scale = if self.decay { (k as f64).sqrt().recip() } else { 1.0 };
        (self.eta_theta * scale, self.eta_lambda * scale)
    }
}

/// Runs the primal-dual iteration. Records share the [`IterateLog`] layout of
/// the surrogate solver: `eta`/`rho` hold the primal/dual step sizes, `alpha`
/// is always zero and `lambda` is the current multiplier.
pub fn run<O: ConstrainedOracle>(oracle: &mut O, cfg: &LagrangianConfig, theta0: &Vector) -> Result<IterateLog, Aborted> {
    let d0 = oracle.budget();
    let mut log = IterateLog { d0, records: Vec::new(), final_theta: theta0.clone() };
    let setup = (|| {
        cfg.validate()?;
        if theta0.len() != oracle.dim() {
            return Err(Error::DimensionMismatch { expected: oracle.dim(), got: theta0.len() });
        }
        let bounds = match &cfg.bounds {
            Some(b) => b.clone(),
            None => Bounds::uniform(theta0.len(), -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH),
        };
        Ok(bounds)
    })();
    let bounds = match setup {
        Ok(b) => b,
        Err(source) => return Err(Aborted { log, source }),
    };

    let mut rng = rng::stream(cfg.seed, 0);
    let mut state = LagrangianState { theta: theta0.clone(), lambda: cfg.lambda0, eta_theta: 0.0, eta_lambda: 0.0 };
    for k in 1..=cfg.max_iter {
        let step = (|| {
            let samples = (0..cfg.n_traj).map(|_| oracle.sample(&state.theta, &mut rng)).collect::<Result<Vec<_>>>()?;
            let sample = OracleSample::mean(&samples);
            sample.check(state.theta.len())?;
            let (j, d, estimated) = match oracle.exact(&state.theta) {
                Some(exact) => {
                    let (j, d) = exact?;
                    (j, d, false)
                }
                None => (sample.j_value, sample.d_value, true),
            };
            Ok::<_, Error>((sample, j, d, estimated))
        })();
        let (sample, j, d, estimated) = match step {
            Ok(s) => s,
            Err(source) => return Err(Aborted { log, source }),
        };
        (state.eta_theta, state.eta_lambda) = cfg.step_sizes(k);
        let lambda = state.lambda;
        let mut next = primal_dual_step(&state, &sample, d0);
        next.theta = bounds.clamp(&next.theta);
        log.records.push(IterateRecord {
            k,
            theta: state.theta.clone(),
            j_curvature: 0.0,
            j,
            d,
            estimated,
            feasible: d <= d0 + cfg.feas_tol,
            alpha: 0.0,
            lambda,
            status: SolveStatus::Interior,
            eta: state.eta_theta,
            rho: state.eta_lambda,
        });
        state = next;
        log.final_theta = state.theta.clone();
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sca::{self, ScaConfig};
    use crate::SimRng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// J = θ², D = (θ - 2)², D0 = 1; KKT point θ = 1, λ = 1.
    struct Toy;

    impl ConstrainedOracle for Toy {
        fn dim(&self) -> usize {
            1
        }
        fn budget(&self) -> f64 {
            1.0
        }
        fn sample(&mut self, theta: &Vector, _rng: &mut SimRng) -> Result<OracleSample> {
            let t = theta[0];
            Ok(OracleSample { j_value: t * t, j_grad: v(&[2.0 * t]), d_value: (t - 2.0).powi(2), d_grad: v(&[2.0 * (t - 2.0)]) })
        }
        fn exact(&self, theta: &Vector) -> Option<Result<(f64, f64)>> {
            let t = theta[0];
            Some(Ok((t * t, (t - 2.0).powi(2))))
        }
    }

    #[test]
    fn kkt_point_is_fixed() {
        let state = LagrangianState { theta: v(&[1.0]), lambda: 1.0, eta_theta: 0.1, eta_lambda: 0.1 };
        let sample = OracleSample { j_value: 1.0, j_grad: v(&[2.0]), d_value: 1.0, d_grad: v(&[-2.0]) };
        assert_eq!(primal_dual_step(&state, &sample, 1.0), state);
    }

    #[test]
    fn multiplier_projection() {
        let state = LagrangianState { theta: v(&[0.0]), lambda: 0.0, eta_theta: 0.1, eta_lambda: 0.5 };
        let sample = OracleSample { j_value: 0.0, j_grad: v(&[0.0]), d_value: 0.2, d_grad: v(&[1.0]) };
        assert_eq!(primal_dual_step(&state, &sample, 1.0).lambda, 0.0);
    }

    #[test]
    fn converges_to_kkt_point_and_agrees_with_sca() {
        let cfg = LagrangianConfig { eta_theta: 0.05, eta_lambda: 0.05, decay: false, max_iter: 20_000, ..Default::default() };
        let log = run(&mut Toy, &cfg, &v(&[3.0])).unwrap();
        let last = log.records.last().unwrap();
        assert!((log.final_theta[0] - 1.0).abs() < 1e-4);
        assert!((last.lambda - 1.0).abs() < 1e-4);
        assert!(log.records.iter().all(|r| r.lambda >= 0.0));

        let sca_log = sca::run(&mut Toy, &ScaConfig { max_iter: 20_000, ..Default::default() }, &v(&[3.0])).unwrap();
        let sca_last = sca_log.records.last().unwrap();
        assert!((sca_log.final_theta[0] - log.final_theta[0]).abs() < 1e-3);
        assert!((sca_last.lambda - last.lambda).abs() < 1e-3, "{} vs {}", sca_last.lambda, last.lambda);
    }

    #[test]
    fn decaying_schedule() {
        let cfg = LagrangianConfig::default();
        assert_eq!(cfg.step_sizes(1), (1e-3, 1e-3));
        let (a, b) = cfg.step_sizes(4);
        assert!((a - 5e-4).abs() < 1e-18 && (b - 5e-4).abs() < 1e-18);
    }
}
