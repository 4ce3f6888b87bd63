//! Warmup adaptation: dual averaging for the step size and a windowed
//! diagonal metric estimate.

/// Nesterov dual averaging of `log(step_size)` toward a target acceptance
/// statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        let mut da = DualAveraging {
            target,
            mu: 0.0,
            log_eps: 0.0,
            log_eps_bar: 0.0,
            h_bar: 0.0,
            count: 0.0,
        };
        da.restart(initial_step);
        da
    }

    pub fn restart(&mut self, step: f64) {
        self.mu = (10.0 * step).ln();
        self.log_eps = step.ln();
        self.log_eps_bar = 0.0;
        self.h_bar = 0.0;
        self.count = 0.0;
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.count += 1.0;
        let eta = 1.0 / (self.count + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_eps = self.mu - self.count.sqrt() / GAMMA * self.h_bar;
        let w = self.count.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    /// Step size to use for the next transition.
    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Averaged step size, used once adaptation ends.
    pub fn finalized(&self) -> f64 {
        if self.count == 0.0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Running per-coordinate variance.
#[derive(Debug, Clone)]
pub struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n as usize
    }

    /// Variance shrunk toward 1e-3, as in Stan's diagonal metric.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0.0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Warmup phase layout: a fast initial buffer, slow windows of doubling
/// length for metric estimation, and a fast terminal buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSchedule {
    pub warmup: usize,
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Iteration indices (0-based) at which a slow window ends.
    pub window_ends: Vec<usize>,
}

impl WindowSchedule {
    pub fn new(warmup: usize) -> Self {
        if warmup < 20 {
            return WindowSchedule {
                warmup,
                init_buffer: warmup,
                term_buffer: 0,
                window_ends: Vec::new(),
            };
        }
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - init - term;
        }
        let slow_end = warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = base;
        while start < slow_end {
            let mut end = start + size;
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            ends.push(end - 1);
            start = end;
            size *= 2;
        }
        WindowSchedule {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_ends: ends,
        }
    }

    pub fn in_slow_phase(&self, it: usize) -> bool {
        it >= self.init_buffer && it < self.warmup - self.term_buffer && !self.window_ends.is_empty()
    }

    pub fn is_window_end(&self, it: usize) -> bool {
        self.window_ends.contains(&it)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stan_default_windows() {
        let w = WindowSchedule::new(1000);
        assert_eq!(w.init_buffer, 75);
        assert_eq!(w.term_buffer, 50);
        assert_eq!(w.window_ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_windows() {
        let w = WindowSchedule::new(100);
        assert_eq!(w.init_buffer, 15);
        assert_eq!(w.term_buffer, 10);
        assert_eq!(w.window_ends, vec![89]);
        assert!(WindowSchedule::new(10).window_ends.is_empty());
    }

    #[test]
    fn dual_averaging_converges_on_monotone_response() {
        // acceptance falls with step size: a(eps) = exp(-eps)
        let mut da = DualAveraging::new(1.0, 0.8);
        for _ in 0..2000 {
            let eps = da.current();
            da.update((-eps).exp());
        }
        let eps = da.finalized();
        assert!((eps - (-0.8f64.ln())).abs() < 0.02, "{eps}");
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [[1.0, 2.0], [3.0, -1.0], [4.0, 0.5], [-2.0, 7.0]];
        let mut w = Welford::new(2);
        for x in &xs {
            w.add(x);
        }
        let mean0 = xs.iter().map(|x| x[0]).sum::<f64>() / 4.0;
        let var0 = xs.iter().map(|x| (x[0] - mean0).powi(2)).sum::<f64>() / 3.0;
        let reg = (4.0 / 9.0) * var0 + 1e-3 * (5.0 / 9.0);
        assert!((w.regularized_variance()[0] - reg).abs() < 1e-12);
    }
}
