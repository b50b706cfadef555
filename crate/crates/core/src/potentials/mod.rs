//! Potential functions `G(X)` whose gradients supply the scheduling weights.
//!
//! A [`Potential`] is an expression tree. Leaves are separable sums of a
//! scalar kernel or quadratic forms of a kernel-transformed state; inner
//! nodes are nonnegative linear combinations, products and compositions
//! with a scalar kernel. Values and gradients are exact (chain and product
//! rules); Hessians are only available numerically, for diagnostics.

mod check;
mod kernel;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NetworkTopology;

pub use check::{check_potential, CheckConfig, ValidityReport, Verdict};
pub use kernel::{Growth, Kernel};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid matrix: {0}")]
    Matrix(String),
    #[error("{op} precondition failed: {clause}")]
    Precondition { op: &'static str, clause: String },
    #[error("potential expects {expected} queues, state has {got}")]
    Dimension { expected: usize, got: usize },
}

/// Sign pattern of the off-diagonal entries of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffDiagonalSign {
    Zero,
    NonPositive,
    NonNegative,
    Mixed,
}

/// Attributes computed when a quadratic-form matrix is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixAttributes {
    pub positive_definite: bool,
    pub off_diagonal: OffDiagonalSign,
}

/// `<g(X) Q . g(X)>` for a symmetric `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadForm {
    kernel: Kernel,
    matrix: Vec<Vec<f64>>,
    attributes: MatrixAttributes,
}

impl QuadForm {
    pub fn new(kernel: Kernel, matrix: Vec<Vec<f64>>) -> Result<Self, PotentialError> {
        let n = matrix.len();
        if n == 0 || matrix.iter().any(|r| r.len() != n) {
            return Err(PotentialError::Matrix(
                "quadratic form needs a square, non-empty matrix".into(),
            ));
        }
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PotentialError::Matrix(
                "matrix has non-finite entries".into(),
            ));
        }
        for i in 0..n {
            for j in 0..i {
                if (matrix[i][j] - matrix[j][i]).abs() > SYMMETRY_TOL * (1.0 + matrix[i][j].abs()) {
                    return Err(PotentialError::Matrix(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let positive_definite = DMatrix::from_fn(n, n, |i, j| matrix[i][j])
            .cholesky()
            .is_some();
        let (mut neg, mut pos) = (false, false);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    neg |= matrix[i][j] < 0.0;
                    pos |= matrix[i][j] > 0.0;
                }
            }
        }
        let off_diagonal = match (neg, pos) {
            (false, false) => OffDiagonalSign::Zero,
            (true, false) => OffDiagonalSign::NonPositive,
            (false, true) => OffDiagonalSign::NonNegative,
            (true, true) => OffDiagonalSign::Mixed,
        };
        Ok(Self {
            kernel,
            matrix,
            attributes: MatrixAttributes {
                positive_definite,
                off_diagonal,
            },
        })
    }

    /// Rejects the form unless its matrix is positive definite.
    pub fn require_positive_definite(self) -> Result<Self, PotentialError> {
        if self.attributes.positive_definite {
            Ok(self)
        } else {
            Err(PotentialError::Matrix(
                "declared positive definite but Cholesky failed".into(),
            ))
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn attributes(&self) -> MatrixAttributes {
        self.attributes
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let u: Vec<f64> = x.iter().map(|&v| self.kernel.value(v)).collect();
        let qu: Vec<f64> = self
            .matrix
            .iter()
            .map(|row| row.iter().zip(&u).map(|(q, v)| q * v).sum())
            .collect();
        if let Some(grad) = grad {
            for (m, g) in grad.iter_mut().enumerate() {
                *g = 2.0 * qu[m] * self.kernel.d1(x[m]);
            }
        }
        u.iter().zip(&qu).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Potential {
    /// `sum_m g(x_m)`.
    SumScalar {
        kernel: Kernel,
    },
    QuadForm(QuadForm),
    /// `a G1 + b G2`, `a, b >= 0`.
    Sum {
        a: f64,
        left: Box<Potential>,
        b: f64,
        right: Box<Potential>,
    },
    Product {
        left: Box<Potential>,
        right: Box<Potential>,
    },
    /// `g(G(X))`.
    OuterCompose {
        kernel: Kernel,
        inner: Box<Potential>,
    },
    /// `G(g(X))`.
    InnerCompose {
        outer: Box<Potential>,
        kernel: Kernel,
    },
}

/// Potential algebra operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Combine {
    Sum(f64, Potential, f64, Potential),
    Product(Potential, Potential),
    Outer(Kernel, Potential),
    Inner(Potential, Kernel),
}

/// Builds a composite potential after checking the composition rules:
/// nonnegative coefficients for sums, a monotonic second factor for
/// products, an at-least-linear kernel for outer composition and a kernel
/// flat at the origin for inner composition.
pub fn combine(op: Combine) -> Result<Potential, PotentialError> {
    match op {
        Combine::Sum(a, left, b, right) => {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(PotentialError::Precondition {
                    op: "sum",
                    clause: format!("coefficients must be >= 0, got {a} and {b}"),
                });
            }
            check_dims("sum", &left, &right)?;
            Ok(Potential::Sum {
                a,
                left: Box::new(left),
                b,
                right: Box::new(right),
            })
        }
        Combine::Product(left, right) => {
            if !right.is_monotonic() {
                return Err(PotentialError::Precondition {
                    op: "product",
                    clause: "second factor must be declared monotonic".into(),
                });
            }
            check_dims("product", &left, &right)?;
            Ok(Potential::Product {
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        Combine::Outer(kernel, inner) => {
            if !(kernel.increasing() && kernel.at_least_linear()) {
                return Err(PotentialError::Precondition {
                    op: "outer",
                    clause: format!(
                        "kernel {} must be increasing with at least linear growth",
                        kernel.describe()
                    ),
                });
            }
            Ok(Potential::OuterCompose {
                kernel,
                inner: Box::new(inner),
            })
        }
        Combine::Inner(outer, kernel) => {
            if !kernel.flat_at_origin() {
                return Err(PotentialError::Precondition {
                    op: "inner",
                    clause: format!("kernel {} must satisfy g'(0) = 0", kernel.describe()),
                });
            }
            Ok(Potential::InnerCompose {
                outer: Box::new(outer),
                kernel,
            })
        }
    }
}

fn check_dims(op: &'static str, a: &Potential, b: &Potential) -> Result<(), PotentialError> {
    match (a.dim(), b.dim()) {
        (Some(x), Some(y)) if x != y => Err(PotentialError::Precondition {
            op,
            clause: format!("operands are defined on {x} and {y} queues"),
        }),
        _ => Ok(()),
    }
}

impl Potential {
    pub fn sum_scalar(kernel: Kernel) -> Self {
        Potential::SumScalar { kernel }
    }

    /// `sum_m x_m`: linear, hence not a valid potential; useful as a foil.
    pub fn linear() -> Self {
        Potential::SumScalar {
            kernel: Kernel::Identity,
        }
    }

    pub fn quad(kernel: Kernel, matrix: Vec<Vec<f64>>) -> Result<Self, PotentialError> {
        Ok(Potential::QuadForm(QuadForm::new(kernel, matrix)?))
    }

    /// Queue count fixed by an embedded matrix, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Potential::SumScalar { .. } => None,
            Potential::QuadForm(q) => Some(q.matrix.len()),
            Potential::Sum { left, right, .. } | Potential::Product { left, right } => {
                left.dim().or(right.dim())
            }
            Potential::OuterCompose { inner, .. } => inner.dim(),
            Potential::InnerCompose { outer, .. } => outer.dim(),
        }
    }

    /// Declared monotonicity: nondecreasing in every component on the
    /// nonnegative orthant.
    pub fn is_monotonic(&self) -> bool {
        match self {
            Potential::SumScalar { kernel } => kernel.increasing(),
            Potential::QuadForm(q) => {
                q.kernel.increasing() && q.matrix.iter().flatten().all(|&v| v >= 0.0)
            }
            Potential::Sum { left, right, .. } => left.is_monotonic() && right.is_monotonic(),
            Potential::Product { left, right } => left.is_monotonic() && right.is_monotonic(),
            Potential::OuterCompose { kernel, inner } => {
                kernel.increasing() && inner.is_monotonic()
            }
            Potential::InnerCompose { outer, kernel } => {
                kernel.increasing() && outer.is_monotonic()
            }
        }
    }

    /// Declared asymptotic growth along rays.
    pub fn growth(&self) -> Growth {
        match self {
            Potential::SumScalar { kernel } => kernel.growth(),
            Potential::QuadForm(q) => {
                let g = q.kernel.growth();
                Growth {
                    degree: 2.0 * g.degree,
                    log_power: 2.0 * g.log_power,
                }
            }
            Potential::Sum { a, left, b, right } => match (*a > 0.0, *b > 0.0) {
                (true, true) => left.growth().max(right.growth()),
                (true, false) => left.growth(),
                (false, true) => right.growth(),
                (false, false) => Growth {
                    degree: 0.0,
                    log_power: 0.0,
                },
            },
            Potential::Product { left, right } => {
                let (l, r) = (left.growth(), right.growth());
                Growth {
                    degree: l.degree + r.degree,
                    log_power: l.log_power + r.log_power,
                }
            }
            Potential::OuterCompose { kernel, inner } => {
                let (k, g) = (kernel.growth(), inner.growth());
                Growth {
                    degree: k.degree * g.degree,
                    log_power: k.log_power + g.log_power * k.degree,
                }
            }
            Potential::InnerCompose { outer, kernel } => {
                let (g, k) = (outer.growth(), kernel.growth());
                Growth {
                    degree: g.degree * k.degree,
                    log_power: g.log_power + k.log_power * g.degree,
                }
            }
        }
    }

    /// Declared order `h0` of the first derivative that stays bounded.
    pub fn polynomial_order(&self) -> u32 {
        self.growth().bounded_derivative_order()
    }

    /// Attributes of every embedded quadratic-form matrix, in tree order.
    pub fn matrix_attributes(&self) -> Vec<MatrixAttributes> {
        let mut out = Vec::new();
        self.walk(&mut |p| {
            if let Potential::QuadForm(q) = p {
                out.push(q.attributes);
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&Potential)) {
        f(self);
        match self {
            Potential::SumScalar { .. } | Potential::QuadForm(_) => {}
            Potential::Sum { left, right, .. } | Potential::Product { left, right } => {
                left.walk(f);
                right.walk(f);
            }
            Potential::OuterCompose { inner, .. } => inner.walk(f),
            Potential::InnerCompose { outer, .. } => outer.walk(f),
        }
    }

    pub fn check_dim(&self, m: usize) -> Result<(), PotentialError> {
        match self.dim() {
            Some(d) if d != m => Err(PotentialError::Dimension {
                expected: d,
                got: m,
            }),
            _ => Ok(()),
        }
    }

    /// `G(x)` for an integer queue state.
    pub fn value(&self, x: &[u64]) -> f64 {
        self.value_f(&to_f64(x))
    }

    /// `grad G(x)` for an integer queue state.
    pub fn gradient(&self, x: &[u64]) -> Vec<f64> {
        let xf = to_f64(x);
        let mut g = vec![0.0; x.len()];
        self.eval(&xf, Some(&mut g));
        g
    }

    pub fn value_f(&self, x: &[f64]) -> f64 {
        self.eval(x, None)
    }

    pub fn gradient_f(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.eval(x, Some(&mut g));
        g
    }

    /// Value and gradient in one pass; `grad` must have the state's length.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(x, Some(grad))
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self {
            Potential::SumScalar { kernel } => {
                if let Some(grad) = grad {
                    for (g, &v) in grad.iter_mut().zip(x) {
                        *g = kernel.d1(v);
                    }
                }
                x.iter().map(|&v| kernel.value(v)).sum()
            }
            Potential::QuadForm(q) => q.eval(x, grad),
            Potential::Sum { a, left, b, right } => match grad {
                None => a * left.eval(x, None) + b * right.eval(x, None),
                Some(grad) => {
                    let mut rg = vec![0.0; x.len()];
                    let lv = left.eval(x, Some(grad));
                    let rv = right.eval(x, Some(&mut rg));
                    for (g, r) in grad.iter_mut().zip(&rg) {
                        *g = a * *g + b * r;
                    }
                    a * lv + b * rv
                }
            },
            Potential::Product { left, right } => match grad {
                None => left.eval(x, None) * right.eval(x, None),
                Some(grad) => {
                    let mut rg = vec![0.0; x.len()];
                    let lv = left.eval(x, Some(grad));
                    let rv = right.eval(x, Some(&mut rg));
                    for (g, r) in grad.iter_mut().zip(&rg) {
                        *g = rv * *g + lv * r;
                    }
                    lv * rv
                }
            },
            Potential::OuterCompose { kernel, inner } => match grad {
                None => kernel.value(inner.eval(x, None)),
                Some(grad) => {
                    let v = inner.eval(x, Some(grad));
                    let s = kernel.d1(v);
                    for g in grad.iter_mut() {
                        *g *= s;
                    }
                    kernel.value(v)
                }
            },
            Potential::InnerCompose { outer, kernel } => {
                let u: Vec<f64> = x.iter().map(|&v| kernel.value(v)).collect();
                match grad {
                    None => outer.eval(&u, None),
                    Some(grad) => {
                        let v = outer.eval(&u, Some(grad));
                        for (g, &xm) in grad.iter_mut().zip(x) {
                            *g *= kernel.d1(xm);
                        }
                        v
                    }
                }
            }
        }
    }

    /// Numeric Hessian from central differences of the exact gradient.
    /// Diagnostics only; never used for scheduling decisions.
    pub fn hessian_fd(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let m = x.len();
        let h = 1e-4 * (1.0 + norm(x));
        let mut hess = vec![vec![0.0; m]; m];
        let mut xp = x.to_vec();
        for j in 0..m {
            xp[j] = x[j] + h;
            let gp = self.gradient_f(&xp);
            xp[j] = x[j] - h;
            let gm = self.gradient_f(&xp);
            xp[j] = x[j];
            for i in 0..m {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..m {
            for j in 0..i {
                let s = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = s;
                hess[j][i] = s;
            }
        }
        hess
    }

    pub fn describe(&self) -> String {
        match self {
            Potential::SumScalar { kernel } => format!("sum_scalar({})", kernel.describe()),
            Potential::QuadForm(q) => format!(
                "quad({}, {}x{})",
                q.kernel.describe(),
                q.matrix.len(),
                q.matrix.len()
            ),
            Potential::Sum { a, left, b, right } => {
                format!("add({}, {a}, {}, {b})", left.describe(), right.describe())
            }
            Potential::Product { left, right } => {
                format!("mul({}, {})", left.describe(), right.describe())
            }
            Potential::OuterCompose { kernel, inner } => {
                format!("outer({}, {})", kernel.describe(), inner.describe())
            }
            Potential::InnerCompose { outer, kernel } => {
                format!("inner({}, {})", outer.describe(), kernel.describe())
            }
        }
    }
}

pub(crate) fn to_f64(x: &[u64]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pressure vector `grad G(X) (I - R)^T`.
pub fn pressure(g: &Potential, x: &[u64], t: &NetworkTopology) -> Vec<f64> {
    let w = g.gradient(x);
    let mut p = vec![0.0; w.len()];
    t.pressure_into(&w, &mut p);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q2() -> Vec<Vec<f64>> {
        vec![vec![2.0, -1.0], vec![-1.0, 2.0]]
    }

    fn quadratic() -> Potential {
        Potential::sum_scalar(Kernel::Power { alpha: 1.0 })
    }

    #[test]
    fn value_examples() {
        assert_eq!(quadratic().value(&[3, 1]), 5.0);
        let pcs = Potential::quad(Kernel::Identity, q2()).unwrap();
        assert_eq!(pcs.value(&[1, 2]), 6.0);
        for g in [
            quadratic(),
            pcs,
            Potential::sum_scalar(Kernel::Log),
            Potential::linear(),
        ] {
            assert_eq!(g.value(&[0, 0]), 0.0);
        }
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(quadratic().gradient(&[3, 1]), vec![3.0, 1.0]);
        let pcs = Potential::quad(Kernel::Identity, q2()).unwrap();
        assert_eq!(pcs.gradient(&[1, 2]), vec![0.0, 6.0]);
        let lpf = Potential::quad(
            Kernel::Lpf { theta: 1.0 },
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let g = lpf.gradient(&[0, 4]);
        assert_eq!(g[0], 0.0);
        assert!(g[1] > 0.0);
    }

    #[test]
    fn pressure_examples() {
        let tandem = NetworkTopology::new(vec![vec![0, 1], vec![0, 0]], None, None).unwrap();
        assert_eq!(pressure(&quadratic(), &[3, 1], &tandem), vec![2.0, 1.0]);
        let single = NetworkTopology::single_hop(2);
        assert_eq!(
            pressure(&quadratic(), &[3, 1], &single),
            quadratic().gradient(&[3, 1])
        );
        let chain3 = NetworkTopology::new(
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]],
            None,
            None,
        )
        .unwrap();
        // Weights equal the state under the quadratic potential.
        assert_eq!(
            pressure(&quadratic(), &[5, 2, 1], &chain3),
            vec![3.0, 1.0, 1.0]
        );
    }

    #[test]
    fn algebra_examples() {
        let s = combine(Combine::Sum(
            1.0,
            quadratic(),
            1.0,
            Potential::sum_scalar(Kernel::Power { alpha: 2.0 }),
        ))
        .unwrap();
        assert_eq!(s.gradient(&[1, 1]), vec![2.0, 2.0]);

        // Product rule: grad(G^2) = 2 G grad G; G = 1/2, grad G = (1, 0) at x = (1, 0).
        let p = combine(Combine::Product(quadratic(), quadratic())).unwrap();
        assert_eq!(p.gradient(&[1, 0]), vec![1.0, 0.0]);

        let err = combine(Combine::Inner(quadratic(), Kernel::Identity)).unwrap_err();
        assert!(matches!(
            err,
            PotentialError::Precondition { op: "inner", .. }
        ));
        assert!(combine(Combine::Sum(-1.0, quadratic(), 1.0, quadratic())).is_err());
        let pcs = Potential::quad(Kernel::Identity, q2()).unwrap();
        assert!(!pcs.is_monotonic());
        assert!(combine(Combine::Product(quadratic(), pcs.clone())).is_err());
        assert!(combine(Combine::Product(pcs, quadratic())).is_ok());
    }

    #[test]
    fn matrix_attributes() {
        let pcs = QuadForm::new(Kernel::Identity, q2()).unwrap();
        assert_eq!(
            pcs.attributes(),
            MatrixAttributes {
                positive_definite: true,
                off_diagonal: OffDiagonalSign::NonPositive
            }
        );
        let conflict = vec![
            vec![1.0, 1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0, 1.0],
        ];
        let lpf = QuadForm::new(Kernel::Lpf { theta: 1.0 }, conflict).unwrap();
        assert!(!lpf.attributes().positive_definite);
        assert!(lpf.require_positive_definite().is_err());
        assert!(QuadForm::new(Kernel::Identity, vec![vec![1.0, 0.5], vec![0.0, 1.0]]).is_err());
        assert!(QuadForm::new(Kernel::Identity, vec![vec![1.0, 0.5]]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = Potential::quad(Kernel::Identity, q2()).unwrap();
        let b = Potential::quad(Kernel::Identity, vec![vec![1.0]]).unwrap();
        assert!(combine(Combine::Sum(1.0, a.clone(), 1.0, b)).is_err());
        assert!(a.check_dim(3).is_err());
        assert!(a.check_dim(2).is_ok());
    }

    #[test]
    fn declared_growth() {
        assert_eq!(quadratic().polynomial_order(), 2);
        let pcs = Potential::quad(Kernel::Identity, q2()).unwrap();
        assert_eq!(pcs.growth().degree, 2.0);
        let outer = combine(Combine::Outer(Kernel::Power { alpha: 1.0 }, pcs)).unwrap();
        assert_eq!(outer.growth().degree, 4.0);
        assert!(!Potential::linear().growth().superlinear());
    }

    #[test]
    fn hessian_of_quadratic_is_identity() {
        let h = quadratic().hessian_fd(&[3.0, 7.0]);
        assert!((h[0][0] - 1.0).abs() < 1e-6 && (h[1][1] - 1.0).abs() < 1e-6);
        assert!(h[0][1].abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn scaling_scales_gradient(x in prop::collection::vec(0u64..50, 3), c in 0.1f64..10.0) {
            let g = Potential::sum_scalar(Kernel::Log);
            let scaled = combine(Combine::Sum(c, g.clone(), 0.0, g.clone())).unwrap();
            for (a, b) in scaled.gradient(&x).iter().zip(g.gradient(&x)) {
                prop_assert!((a - c * b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn flat_kernels_vanish_on_empty_queues(x in prop::collection::vec(0u64..20, 4)) {
            for k in [Kernel::Power { alpha: 1.0 }, Kernel::Log, Kernel::Lpf { theta: 2.0 }] {
                let g = Potential::sum_scalar(k).gradient(&x);
                for (gm, xm) in g.iter().zip(&x) {
                    if *xm == 0 {
                        prop_assert!(*gm <= 1e-9);
                    }
                }
            }
        }
    }
}
