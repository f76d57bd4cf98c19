//! Continuous-time LTI systems `ẋ = Ax + Bw`, `z = Cx + Dw` and their
//! frequency responses.

use nalgebra::{Complex, DMatrix};

use crate::linalg::{to_complex, CMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "A must be square");
        assert_eq!(b.nrows(), a.nrows(), "B rows must match A");
        assert_eq!(c.ncols(), a.nrows(), "C columns must match A");
        assert_eq!(d.shape(), (c.nrows(), b.ncols()), "D must be outputs × inputs");
        Self { a, b, c, d }
    }

    /// A memoryless system `z = D·w`.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        Self { a: DMatrix::zeros(0, 0), b: DMatrix::zeros(0, m), c: DMatrix::zeros(p, 0), d }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_square_io(&self) -> bool {
        self.inputs() == self.outputs()
    }

    /// `G(jω) = C(jωI − A)⁻¹B + D`. Returns `None` if `jω` is a pole.
    pub fn freq_response(&self, omega: f64) -> Option<CMatrix> {
        let n = self.states();
        let d = to_complex(&self.d);
        if n == 0 {
            return Some(d);
        }
        let mut m = -to_complex(&self.a);
        for i in 0..n {
            m[(i, i)] += Complex::new(0.0, omega);
        }
        let x = m.lu().solve(&to_complex(&self.b))?;
        Some(to_complex(&self.c) * x + d)
    }

    /// State-coordinate change `x = T·x̂`.
    pub fn similarity(&self, t: &DMatrix<f64>, t_inv: &DMatrix<f64>) -> LtiSystem {
        LtiSystem {
            a: t_inv * &self.a * t,
            b: t_inv * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
        }
    }
}
