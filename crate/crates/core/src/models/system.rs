//! ODE right-hand sides.

/// A state equation `dX/dt = F(t, X, beta, eta(t))` with known initial state.
///
/// `params` is always the full constant-parameter vector in `param_names`
/// order; which entries are free is decided by the fit, not the system.
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn param_names(&self) -> &[&'static str];
    /// Whether the right-hand side reads the time-varying slot.
    fn uses_eta(&self) -> bool;
    fn initial_state(&self) -> &[f64];
    fn interval(&self) -> (f64, f64);
    fn rhs(&self, t: f64, x: &[f64], params: &[f64], eta: Option<f64>, dx: &mut [f64]);
    fn obs_dim(&self) -> usize;
    fn observe(&self, x: &[f64], y: &mut [f64]);

    fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|p| *p == name)
    }
}

/// Parameter order of [`Hiv`]: `(lambda, rho, N, delta, c)`.
pub const HIV_PARAMS: [&str; 5] = ["lambda", "rho", "N", "delta", "c"];

/// Target-cell limited HIV model with states `(T_U, T_I, V)`:
///
/// ```text
/// T_U' = lambda - rho T_U - eta(t) T_U V
/// T_I' = eta(t) T_U V - delta T_I
/// V'   = N delta T_I - c V
/// ```
///
/// Observed outputs are total CD4+ count `T_U + T_I` and viral load `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hiv {
    pub x0: [f64; 3],
    pub t0: f64,
    pub t_end: f64,
}

impl Default for Hiv {
    fn default() -> Self {
        Hiv {
            x0: [600.0, 30.0, 1e5],
            t0: 0.0,
            t_end: 20.0,
        }
    }
}

/// The HIV model with the simulation-study initial state and interval.
pub fn hiv_system() -> Hiv {
    Hiv::default()
}

/// Constant parameters of the simulation study, in [`HIV_PARAMS`] order.
pub const HIV_TRUTH: [f64; 5] = [36.0, 0.108, 1000.0, 0.5, 3.0];

impl OdeSystem for Hiv {
    fn name(&self) -> &str {
        "hiv"
    }
    fn dim(&self) -> usize {
        3
    }
    fn param_names(&self) -> &[&'static str] {
        &HIV_PARAMS
    }
    fn uses_eta(&self) -> bool {
        true
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn interval(&self) -> (f64, f64) {
        (self.t0, self.t_end)
    }

    #[inline]
    fn rhs(&self, _t: f64, x: &[f64], p: &[f64], eta: Option<f64>, dx: &mut [f64]) {
        let (lambda, rho, n, delta, c) = (p[0], p[1], p[2], p[3], p[4]);
        let eta = eta.unwrap_or(0.0);
        let infection = eta * x[0] * x[2];
        dx[0] = lambda - rho * x[0] - infection;
        dx[1] = infection - delta * x[1];
        dx[2] = n * delta * x[1] - c * x[2];
    }

    fn obs_dim(&self) -> usize {
        2
    }
    fn observe(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0] + x[1];
        y[1] = x[2];
    }
}

/// `x' = -k x`, observed directly. Analytic solution `x0 exp(-k (t - t0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decay {
    pub x0: f64,
    pub t0: f64,
    pub t_end: f64,
}

impl Decay {
    pub fn new(x0: f64, t0: f64, t_end: f64) -> Self {
        Decay { x0, t0, t_end }
    }

    pub fn exact(&self, k: f64, t: f64) -> f64 {
        self.x0 * (-k * (t - self.t0)).exp()
    }
}

impl Default for Decay {
    fn default() -> Self {
        Decay::new(1.0, 0.0, 1.0)
    }
}

impl OdeSystem for Decay {
    fn name(&self) -> &str {
        "decay"
    }
    fn dim(&self) -> usize {
        1
    }
    fn param_names(&self) -> &[&'static str] {
        &["k"]
    }
    fn uses_eta(&self) -> bool {
        false
    }
    fn initial_state(&self) -> &[f64] {
        std::slice::from_ref(&self.x0)
    }
    fn interval(&self) -> (f64, f64) {
        (self.t0, self.t_end)
    }
    #[inline]
    fn rhs(&self, _t: f64, x: &[f64], p: &[f64], _eta: Option<f64>, dx: &mut [f64]) {
        dx[0] = -p[0] * x[0];
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn observe(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

/// `x' = -(k + eta(t)) x`: the additive constant/time-varying form whose
/// identification needs the centering constraint on `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveDecay {
    pub x0: f64,
    pub t0: f64,
    pub t_end: f64,
}

impl AdditiveDecay {
    pub fn new(x0: f64, t0: f64, t_end: f64) -> Self {
        AdditiveDecay { x0, t0, t_end }
    }
}

impl OdeSystem for AdditiveDecay {
    fn name(&self) -> &str {
        "additive_decay"
    }
    fn dim(&self) -> usize {
        1
    }
    fn param_names(&self) -> &[&'static str] {
        &["k"]
    }
    fn uses_eta(&self) -> bool {
        true
    }
    fn initial_state(&self) -> &[f64] {
        std::slice::from_ref(&self.x0)
    }
    fn interval(&self) -> (f64, f64) {
        (self.t0, self.t_end)
    }
    #[inline]
    fn rhs(&self, _t: f64, x: &[f64], p: &[f64], eta: Option<f64>, dx: &mut [f64]) {
        dx[0] = -(p[0] + eta.unwrap_or(0.0)) * x[0];
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn observe(&self, x: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hiv_rhs_at_start(params: &[f64], eta: f64) -> [f64; 3] {
        let sys = hiv_system();
        let mut dx = [0.0; 3];
        sys.rhs(0.0, sys.initial_state(), params, Some(eta), &mut dx);
        dx
    }

    #[test]
    fn hiv_rhs_matches_hand_substitution() {
        let dx = hiv_rhs_at_start(&HIV_TRUTH, 9.5e-6);
        // 36 - 0.108*600 - 9.5e-6*600*1e5 = 36 - 64.8 - 570
        let hand_tu = 36.0 - 64.8 - 570.0;
        assert!((hand_tu - -598.8_f64).abs() < 1e-12);
        assert!((dx[0] - hand_tu).abs() < 1e-9, "{}", dx[0]);
        // 570 - 0.5*30
        assert!((dx[1] - 555.0).abs() < 1e-9);
        // 1000*0.5*30 - 3*1e5
        assert!((dx[2] - -285_000.0).abs() < 1e-9);
    }

    #[test]
    fn hiv_rhs_without_sources_is_flat_in_tu() {
        let params = [0.0, 0.0, 1000.0, 0.5, 3.0];
        let dx = hiv_rhs_at_start(&params, 0.0);
        assert_eq!(dx[0], 0.0);
    }

    #[test]
    fn hiv_observation_map() {
        let sys = hiv_system();
        let mut y = [0.0; 2];
        sys.observe(&[600.0, 30.0, 1e5], &mut y);
        assert_eq!(y, [630.0, 1e5]);
        assert_eq!(sys.param_index("N"), Some(2));
    }
}
