//! Static-trajectory Hamiltonian Monte Carlo with a diagonal metric.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::likelihood::JointPosterior;

/// Energy increase treated as a divergent trajectory.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Position with cached log density and gradient.
#[derive(Debug, Clone)]
pub struct State {
    pub q: Vec<f64>,
    pub lp: f64,
    pub grad: Vec<f64>,
}

impl State {
    pub fn new(post: &JointPosterior, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let lp = post.log_density_and_grad(&q, &mut grad);
        State { q, lp, grad }
    }

    pub fn is_finite(&self) -> bool {
        self.lp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Transition {
    pub accept_prob: f64,
    pub accepted: bool,
    pub divergent: bool,
    /// Hamiltonian at the start of the trajectory.
    pub energy: f64,
}

/// Scratch buffers reused across transitions.
pub struct Integrator<'a> {
    post: &'a JointPosterior,
    pub inv_mass: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(post: &'a JointPosterior, inv_mass: Vec<f64>) -> Self {
        let d = post.dim();
        Integrator {
            post,
            inv_mass,
            q: vec![0.0; d],
            p: vec![0.0; d],
            g: vec![0.0; d],
        }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn draw_momentum<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (p, m) in self.p.iter_mut().zip(&self.inv_mass) {
            let z: f64 = rng.sample(StandardNormal);
            *p = z / m.sqrt();
        }
    }

    /// Integrate `steps` leapfrog steps from `start` with the momentum in
    /// `self.p`. Returns the end log density, or `None` when the trajectory
    /// hits a non-finite density.
    fn integrate(&mut self, start: &State, eps: f64, steps: usize) -> Option<f64> {
        self.q.copy_from_slice(&start.q);
        self.g.copy_from_slice(&start.grad);
        let mut lp = start.lp;
        for (p, g) in self.p.iter_mut().zip(&self.g) {
            *p += 0.5 * eps * g;
        }
        for step in 0..steps {
            for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(&self.inv_mass) {
                *q += eps * m * p;
            }
            lp = self.post.log_density_and_grad(&self.q, &mut self.g);
            if !lp.is_finite() || self.g.iter().any(|g| !g.is_finite()) {
                return None;
            }
            let w = if step + 1 == steps { 0.5 } else { 1.0 };
            for (p, g) in self.p.iter_mut().zip(&self.g) {
                *p += w * eps * g;
            }
        }
        Some(lp)
    }

    /// One Metropolis-corrected HMC transition; `state` is updated in place
    /// on acceptance.
    pub fn transition<R: Rng + ?Sized>(
        &mut self,
        state: &mut State,
        eps: f64,
        steps: usize,
        rng: &mut R,
    ) -> Transition {
        self.draw_momentum(rng);
        let h0 = -state.lp + self.kinetic(&self.p);
        let end = self.integrate(state, eps, steps);
        let (accept_prob, divergent) = match end {
            None => (0.0, true),
            Some(lp1) => {
                let h1 = -lp1 + self.kinetic(&self.p);
                let delta = h1 - h0;
                if !delta.is_finite() || delta > MAX_ENERGY_ERROR {
                    (0.0, true)
                } else {
                    ((-delta).exp().min(1.0), false)
                }
            }
        };
        let u: f64 = rng.random();
        let accepted = !divergent && u < accept_prob;
        if accepted {
            state.q.copy_from_slice(&self.q);
            state.grad.copy_from_slice(&self.g);
            state.lp = end.expect("finite trajectory");
        }
        Transition {
            accept_prob,
            accepted,
            divergent,
            energy: h0,
        }
    }

    /// Energy error `H(end) - H(start)` of a deterministic trajectory from
    /// `(start, momentum)`.
    pub fn energy_error(&mut self, start: &State, momentum: &[f64], eps: f64, steps: usize) -> f64 {
        self.p.copy_from_slice(momentum);
        let h0 = -start.lp + self.kinetic(&self.p);
        match self.integrate(start, eps, steps) {
            Some(lp1) => -lp1 + self.kinetic(&self.p) - h0,
            None => f64::INFINITY,
        }
    }

    /// Heuristic initial step size: double or halve until the one-step
    /// acceptance probability crosses 0.8.
    pub fn find_reasonable_step<R: Rng + ?Sized>(&mut self, state: &State, eps0: f64, rng: &mut R) -> f64 {
        let mut eps = eps0;
        let accept = |this: &mut Self, eps: f64, rng: &mut R| {
            this.draw_momentum(rng);
            let h0 = -state.lp + this.kinetic(&this.p);
            match this.integrate(state, eps, 1) {
                Some(lp1) => {
                    let d = -lp1 + this.kinetic(&this.p) - h0;
                    if d.is_finite() {
                        (-d).exp().min(1.0)
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            }
        };
        let a = accept(self, eps, rng);
        let up = a > 0.8;
        for _ in 0..60 {
            let next = if up { eps * 2.0 } else { eps * 0.5 };
            let a = accept(self, next, rng);
            if up && a < 0.8 {
                break;
            }
            eps = next;
            if !up && a > 0.8 {
                break;
            }
        }
        eps
    }
}
