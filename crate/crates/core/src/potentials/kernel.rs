use serde::{Deserialize, Serialize};

use super::PotentialError;

/// Asymptotic order `x^degree * log(x)^log_power`, used for the declared
/// (structural) growth attributes of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub degree: f64,
    pub log_power: f64,
}

impl Growth {
    pub const LINEAR: Growth = Growth {
        degree: 1.0,
        log_power: 0.0,
    };

    pub fn superlinear(&self) -> bool {
        self.degree > 1.0 || (self.degree == 1.0 && self.log_power > 0.0)
    }

    /// Smallest derivative order that stays bounded at infinity.
    pub fn bounded_derivative_order(&self) -> u32 {
        let base = self.degree.ceil().max(1.0) as u32;
        // A log factor keeps the derivative of order `degree` growing.
        if self.log_power > 0.0 && self.degree.fract() == 0.0 {
            base + 1
        } else {
            base
        }
    }

    pub(crate) fn max(self, other: Growth) -> Growth {
        if self.degree > other.degree
            || (self.degree == other.degree && self.log_power >= other.log_power)
        {
            self
        } else {
            other
        }
    }
}

/// Scalar functions applied componentwise to the queue state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Kernel {
    /// `x^(1+alpha) / (1+alpha)`; gradient weight `x^alpha`.
    Power {
        alpha: f64,
    },
    /// `(x+1)(ln(x+1) - 1) + 1`; gradient weight `ln(1+x)`.
    Log,
    /// `x + theta (exp(-x/theta) - 1)`.
    Lpf {
        theta: f64,
    },
    Identity,
}

impl Kernel {
    pub const DEFAULT_ALPHA: f64 = 1.0;
    pub const DEFAULT_THETA: f64 = 1.0;

    pub fn power(alpha: f64) -> Result<Self, PotentialError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(PotentialError::Parameter(format!(
                "power exponent alpha = {alpha} must be > 0"
            )));
        }
        Ok(Kernel::Power { alpha })
    }

    pub fn lpf(theta: f64) -> Result<Self, PotentialError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(PotentialError::Parameter(format!(
                "lpf theta = {theta} must be > 0"
            )));
        }
        Ok(Kernel::Lpf { theta })
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            // Odd extension keeps the kernel C^1 if an outer composition is
            // ever evaluated at a slightly negative argument.
            Kernel::Power { alpha } => x.signum() * x.abs().powf(1.0 + alpha) / (1.0 + alpha),
            Kernel::Log => (x + 1.0) * (x.ln_1p() - 1.0) + 1.0,
            Kernel::Lpf { theta } => x + theta * (-x / theta).exp_m1(),
            Kernel::Identity => x,
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            Kernel::Power { alpha } => x.abs().powf(alpha),
            Kernel::Log => x.ln_1p(),
            Kernel::Lpf { theta } => -(-x / theta).exp_m1(),
            Kernel::Identity => 1.0,
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            Kernel::Power { alpha } => alpha * x.signum() * x.abs().powf(alpha - 1.0),
            Kernel::Log => 1.0 / (1.0 + x),
            Kernel::Lpf { theta } => (-x / theta).exp() / theta,
            Kernel::Identity => 0.0,
        }
    }

    /// `g'(0) = 0`.
    pub fn flat_at_origin(&self) -> bool {
        !matches!(self, Kernel::Identity)
    }

    /// Nondecreasing on the nonnegative half-line (true for every family).
    pub fn increasing(&self) -> bool {
        true
    }

    /// `liminf g(x)/x > 0` together with sub-exponential growth, the
    /// requirement on an outer composition kernel. Every family qualifies.
    pub fn at_least_linear(&self) -> bool {
        true
    }

    pub fn growth(&self) -> Growth {
        match *self {
            Kernel::Power { alpha } => Growth {
                degree: 1.0 + alpha,
                log_power: 0.0,
            },
            Kernel::Log => Growth {
                degree: 1.0,
                log_power: 1.0,
            },
            Kernel::Lpf { .. } | Kernel::Identity => Growth::LINEAR,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Kernel::Power { alpha } => format!("pow({alpha})"),
            Kernel::Log => "log".into(),
            Kernel::Lpf { theta } => format!("lpf({theta})"),
            Kernel::Identity => "identity".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KERNELS: [Kernel; 5] = [
        Kernel::Power { alpha: 1.0 },
        Kernel::Power { alpha: 0.5 },
        Kernel::Log,
        Kernel::Lpf { theta: 1.0 },
        Kernel::Identity,
    ];

    #[test]
    fn origin_values() {
        for k in KERNELS {
            assert_eq!(k.value(0.0), 0.0, "{k:?}");
        }
        for k in &KERNELS[..4] {
            assert_eq!(k.d1(0.0), 0.0, "{k:?}");
            assert!(k.flat_at_origin());
        }
        assert!(!Kernel::Identity.flat_at_origin());
    }

    #[test]
    fn derivatives_match_differences() {
        for k in KERNELS {
            for x in [0.3, 1.0, 2.5, 17.0, 400.0] {
                let h = 1e-5 * (1.0 + x);
                let d1 = (k.value(x + h) - k.value(x - h)) / (2.0 * h);
                let d2 = (k.d1(x + h) - k.d1(x - h)) / (2.0 * h);
                assert!(
                    (d1 - k.d1(x)).abs() <= 1e-6 * (1.0 + d1.abs()),
                    "{k:?} d1 at {x}"
                );
                assert!(
                    (d2 - k.d2(x)).abs() <= 1e-5 * (1.0 + d2.abs()),
                    "{k:?} d2 at {x}"
                );
            }
        }
    }

    #[test]
    fn parameters_are_checked() {
        assert!(Kernel::power(0.0).is_err());
        assert!(Kernel::lpf(-1.0).is_err());
        assert!(Kernel::power(f64::NAN).is_err());
    }

    #[test]
    fn declared_orders() {
        assert_eq!(
            Kernel::Power { alpha: 1.0 }
                .growth()
                .bounded_derivative_order(),
            2
        );
        assert_eq!(
            Kernel::Power { alpha: 1.5 }
                .growth()
                .bounded_derivative_order(),
            3
        );
        assert_eq!(Kernel::Log.growth().bounded_derivative_order(), 2);
        assert_eq!(
            Kernel::Lpf { theta: 1.0 }
                .growth()
                .bounded_derivative_order(),
            1
        );
        assert!(Kernel::Log.growth().superlinear());
        assert!(!Kernel::Identity.growth().superlinear());
    }

    proptest! {
        #[test]
        fn lpf_bounds(x in 0.0f64..1e4, theta in 0.05f64..20.0) {
            let k = Kernel::Lpf { theta };
            prop_assert!(k.value(x) <= x + 1e-12);
            prop_assert!(k.value(x) >= 0.0);
            let d = k.d1(x);
            prop_assert!((0.0..1.0).contains(&d) || (d == 1.0 && x / theta > 30.0));
        }
    }
}
