//! Nemenyi critical difference for comparing `k` methods over `N` datasets.

use crate::error::{Error, Result};

/// `CD = q_α · sqrt(k(k+1) / (6N))`
pub fn nemenyi_cd(k: usize, n: usize, q_alpha: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::param("k", format!("{k} methods; need at least 2")));
    }
    if n < 1 {
        return Err(Error::param("n", "need at least one dataset"));
    }
    if !(q_alpha > 0.0 && q_alpha.is_finite()) {
        return Err(Error::param("q_alpha", format!("{q_alpha} must be positive")));
    }
    let k = k as f64;
    Ok(q_alpha * (k * (k + 1.0) / (6.0 * n as f64)).sqrt())
}

/// Two-tailed Nemenyi critical values at α = 0.05 for k = 2..=10
/// (studentized range statistic divided by √2).
pub fn q_alpha_005(k: usize) -> Option<f64> {
    const TABLE: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
    k.checked_sub(2).and_then(|i| TABLE.get(i).copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_value() {
        let cd = nemenyi_cd(6, 24, 3.102).unwrap();
        assert!((cd - 1.6753).abs() <= 1e-4);
    }

    #[test]
    fn two_methods() {
        let cd = nemenyi_cd(2, 6, 1.960).unwrap();
        assert!((cd - 1.960 * (6.0f64 / 36.0).sqrt()).abs() < 1e-12);
        assert!((cd - 0.8002).abs() < 1e-4);
    }

    #[test]
    fn shrinks_with_more_datasets() {
        let small = nemenyi_cd(4, 10, 2.569).unwrap();
        let large = nemenyi_cd(4, 1_000_000, 2.569).unwrap();
        assert!(large < small);
        assert!(large < 0.01);
    }

    #[test]
    fn invalid_arguments() {
        assert!(nemenyi_cd(1, 5, 2.0).is_err());
        assert!(nemenyi_cd(3, 0, 2.0).is_err());
        assert_eq!(q_alpha_005(1), None);
        assert_eq!(q_alpha_005(9), Some(3.102));
    }
}
