//! Second-order spatial jets: a scalar field's value, gradient and
//! Laplacian at one point, propagated exactly through arithmetic.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 3],
    pub lap: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Jet {
    pub const fn new(value: f64, grad: [f64; 3], lap: f64) -> Self {
        Jet { value, grad, lap }
    }

    pub const fn constant(value: f64) -> Self {
        Jet {
            value,
            grad: [0.0; 3],
            lap: 0.0,
        }
    }

    /// The coordinate function `x_axis` evaluated at `value`.
    pub fn coordinate(axis: usize, value: f64) -> Self {
        let mut grad = [0.0; 3];
        grad[axis] = 1.0;
        Jet { value, grad, lap: 0.0 }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        dot(self.grad, self.grad)
    }

    pub fn grad_dot(&self, other: &Jet) -> f64 {
        dot(self.grad, other.grad)
    }

    /// Applies a scalar function given `f(v)`, `f'(v)` and `f''(v)`:
    /// `∇f = f'∇v`, `Δf = f''|∇v|² + f'Δv`.
    pub fn chain(self, f: f64, df: f64, d2f: f64) -> Jet {
        Jet {
            value: f,
            grad: self.grad.map(|g| df * g),
            lap: d2f * self.grad_norm_sq() + df * self.lap,
        }
    }

    pub fn tanh(self) -> Jet {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    pub fn sin(self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Jet {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Jet {
        let v = self.value;
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn square(self) -> Jet {
        self * self
    }

    pub fn scale(self, s: f64) -> Jet {
        Jet {
            value: s * self.value,
            grad: self.grad.map(|g| s * g),
            lap: s * self.lap,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.is_finite()) && self.lap.is_finite()
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            value: self.value + o.value,
            grad: [self.grad[0] + o.grad[0], self.grad[1] + o.grad[1], self.grad[2] + o.grad[2]],
            lap: self.lap + o.lap,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.value += c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, s: f64) -> Jet {
        self.scale(s)
    }
}

/// Product rule: `Δ(fg) = fΔg + gΔf + 2∇f·∇g`.
impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            value: self.value * o.value,
            grad: [
                self.value * o.grad[0] + o.value * self.grad[0],
                self.value * o.grad[1] + o.value * self.grad[1],
                self.value * o.grad[2] + o.value * self.grad[2],
            ],
            lap: self.value * o.lap + o.value * self.lap + 2.0 * self.grad_dot(&o),
        }
    }
}
