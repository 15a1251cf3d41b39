/// Linear energy model in microamp-hours for a network with `params`
/// parameters running for `t` seconds. Negative for small `t`: the intercept
/// is an extrapolation artifact.
pub fn energy_estimate(params: usize, t: f64) -> f64 {
    (0.0008 * params as f64 + 1.3) * t - 17.104
}

/// Display value, clamped at zero.
pub fn energy_display(params: usize, t: f64) -> f64 {
    energy_estimate(params, t).max(0.0)
}
