#![allow(dead_code)]

pub mod engine_checks;
pub mod oracle;
pub mod repair_checks;
pub mod sampler_checks;
pub mod shape_checks;

/// Outcome of one acceptance check: `Err` carries a human-readable reason.
pub type Check = Result<(), String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        {
            let holds: bool = $cond;
            if !holds {
                return Err(format!($($fmt)+));
            }
        }
    };
}

/// `|observed - n p| <= 3 sqrt(n p (1 - p))`.
pub fn within_three_sigma(count: u64, n: u64, p: f64) -> Result<(), String> {
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let dev = (count as f64 - expected).abs();
    if dev <= 3.0 * sigma {
        Ok(())
    } else {
        Err(format!(
            "count {count} of {n} deviates from {expected:.1} by {dev:.1} > 3 sigma = {:.1}",
            3.0 * sigma
        ))
    }
}
