//! Constrained reconstruction: a Lagrange multiplier scales the
//! reconstruction term and grows while the smoothed per-pixel MSE sits above
//! the target `kappa`.

use super::TrainConfig;

pub const MULTIPLIER_MIN: f64 = 1e-4;
pub const MULTIPLIER_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GecoState {
    pub lagrange_multiplier: f64,
    /// Exponential moving average of `mse - kappa`.
    pub constraint_ma: f64,
}

impl Default for GecoState {
    fn default() -> Self {
        Self {
            lagrange_multiplier: 1.0,
            constraint_ma: 0.0,
        }
    }
}

pub fn geco_step(state: GecoState, batch_mse: f64, cfg: &TrainConfig) -> GecoState {
    debug_assert!(batch_mse >= 0.0);
    let constraint = batch_mse - cfg.geco_kappa;
    let ma = cfg.geco_ma_decay * state.constraint_ma + (1.0 - cfg.geco_ma_decay) * constraint;
    let multiplier = (state.lagrange_multiplier * (cfg.geco_alpha * ma).exp()).clamp(MULTIPLIER_MIN, MULTIPLIER_MAX);
    GecoState {
        lagrange_multiplier: multiplier,
        constraint_ma: ma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfied_constraint_keeps_multiplier() {
        let cfg = TrainConfig::default();
        let s = geco_step(GecoState::default(), cfg.geco_kappa, &cfg);
        assert_eq!(s.lagrange_multiplier, 1.0);
        assert_eq!(s.constraint_ma, 0.0);
    }

    #[test]
    fn violated_constraint_increases_monotonically() {
        let cfg = TrainConfig::default();
        let mut s = GecoState::default();
        for _ in 0..200 {
            let next = geco_step(s, cfg.geco_kappa + 0.05, &cfg);
            assert!(next.lagrange_multiplier > s.lagrange_multiplier);
            s = next;
        }
    }

    #[test]
    fn multiplier_is_clamped() {
        let cfg = TrainConfig {
            geco_alpha: 5.0,
            ..TrainConfig::default()
        };
        let mut s = GecoState::default();
        for _ in 0..5000 {
            s = geco_step(s, 10.0, &cfg);
            assert!(s.lagrange_multiplier <= MULTIPLIER_MAX);
        }
        assert_eq!(s.lagrange_multiplier, MULTIPLIER_MAX);
        for _ in 0..50000 {
            s = geco_step(s, 0.0, &cfg);
            assert!(s.lagrange_multiplier >= MULTIPLIER_MIN);
        }
        assert_eq!(s.lagrange_multiplier, MULTIPLIER_MIN);
    }
}
