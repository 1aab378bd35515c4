//! Locale-free float formatting shared by the CSV writers and the scenario
//! serializer.

/// 17 significant digits in scientific notation; round-trips every finite
/// `f64` and is also valid TOML.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalizes -0.0 as well
        return "0.0000000000000000e0".to_owned();
    }
    format!("{x:.16e}")
}
