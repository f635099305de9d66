//! Polygamma functions. The incomplete gamma and error functions come
//! from `statrs`.

pub use statrs::function::erf::erfc;
pub use statrs::function::gamma::{gamma_lr, ln_gamma};

const SHIFT: f64 = 10.0;

/// Digamma ψ(x) for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < SHIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    // Bernoulli-number asymptotic series
    let series = x2
        * (1.0 / 12.0
            - x2 * (1.0 / 120.0
                - x2 * (1.0 / 252.0
                    - x2 * (1.0 / 240.0
                        - x2 * (1.0 / 132.0 - x2 * (691.0 / 32760.0 - x2 / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// Trigamma ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < SHIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let ix = 1.0 / x;
    let x2 = ix * ix;
    let series = 1.0 / 6.0
        - x2 * (1.0 / 30.0
            - x2 * (1.0 / 42.0
                - x2 * (1.0 / 30.0 - x2 * (5.0 / 66.0 - x2 * (691.0 / 2730.0 - x2 * 7.0 / 6.0)))));
    acc + ix + 0.5 * x2 + ix * x2 * series
}
