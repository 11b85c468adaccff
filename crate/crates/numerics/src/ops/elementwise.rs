use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Var;
use crate::kernels::{broadcast_shape, Broadcast};
use crate::tensor::{numel, Tensor};

struct Bin<T> {
    shape: Vec<usize>,
    ba: Broadcast,
    bb: Broadcast,
    a: Arc<Tensor<T>>,
    b: Arc<Tensor<T>>,
}

fn prepare<T: Element>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<Bin<T>> {
    let Some(shape) = broadcast_shape(a.shape(), b.shape()) else {
        return dim_err(op, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    };
    Ok(Bin {
        ba: Broadcast::new(&shape, a.shape()),
        bb: Broadcast::new(&shape, b.shape()),
        shape,
        a: a.value_arc(),
        b: b.value_arc(),
    })
}

impl<T: Element> Bin<T> {
    fn apply(&self, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ad, bd) = (self.a.data(), self.b.data());
        let n = numel(&self.shape);
        let data = match (&self.ba, &self.bb) {
            (Broadcast::Same, Broadcast::Same) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(ad[self.ba.offset(i)], bd[self.bb.offset(i)])).collect(),
        };
        Tensor::from_parts(self.shape.clone(), data)
    }

    fn grad_a(&self, g: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
        self.reduce_to(&self.ba, self.a.shape(), g, f)
    }

    fn grad_b(&self, g: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
        self.reduce_to(&self.bb, self.b.shape(), g, f)
    }

    /// Computes `f(g, a, b)` per output element and sums it onto the source shape.
    fn reduce_to(&self, bc: &Broadcast, shape: &[usize], g: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
        let (ad, bd) = (self.a.data(), self.b.data());
        let local: Vec<T> = g
            .data()
            .iter()
            .enumerate()
            .map(|(i, &gv)| f(gv, ad[self.ba.offset(i)], bd[self.bb.offset(i)]))
            .collect();
        Tensor::from_parts(shape.to_vec(), bc.reduce(&local, numel(shape)))
    }
}

/// Which saved tensor an elementwise adjoint reads.
#[derive(Clone, Copy)]
enum Saves {
    Input,
    Output,
}

fn unary<'g, T: Element>(
    x: &Var<'g, T>,
    op: &'static str,
    saves: Saves,
    f: impl Fn(T) -> T,
    // derivative from the saved value
    df: impl Fn(T) -> T + 'static,
) -> Result<Var<'g, T>> {
    let out = x.value().map(f);
    let saved = match saves {
        Saves::Input => x.value_arc(),
        Saves::Output => Arc::new(out.clone()),
    };
    x.graph.record(op, out, &[x], move |g, _| {
        let data = g
            .data()
            .iter()
            .zip(saved.data())
            .map(|(&gv, &sv)| gv * df(sv))
            .collect();
        vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
    })
}

pub(crate) fn gelu_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let bin = prepare("add", self, other)?;
        let out = bin.apply(|a, b| a + b);
        self.graph.record("add", out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| bin.grad_a(g, |g, _, _| g)),
                needs[1].then(|| bin.grad_b(g, |g, _, _| g)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let bin = prepare("sub", self, other)?;
        let out = bin.apply(|a, b| a - b);
        self.graph.record("sub", out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| bin.grad_a(g, |g, _, _| g)),
                needs[1].then(|| bin.grad_b(g, |g, _, _| -g)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let bin = prepare("mul", self, other)?;
        let out = bin.apply(|a, b| a * b);
        self.graph.record("mul", out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| bin.grad_a(g, |g, _, b| g * b)),
                needs[1].then(|| bin.grad_b(g, |g, a, _| g * a)),
            ]
        })
    }

    pub fn div(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let bin = prepare("div", self, other)?;
        let out = bin.apply(|a, b| a / b);
        self.graph.record("div", out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| bin.grad_a(g, |g, _, b| g / b)),
                needs[1].then(|| bin.grad_b(g, |g, a, b| -g * a / (b * b))),
            ]
        })
    }

    pub fn neg(&self) -> Result<Var<'g, T>> {
        unary(self, "neg", Saves::Input, |x| -x, |_| -T::one())
    }

    pub fn scale(&self, s: f64) -> Result<Var<'g, T>> {
        let s = T::from_f64(s);
        unary(self, "scale", Saves::Input, move |x| x * s, move |_| s)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Var<'g, T>> {
        let s = T::from_f64(s);
        unary(self, "add_scalar", Saves::Input, move |x| x + s, |_| T::one())
    }

    pub fn exp(&self) -> Result<Var<'g, T>> {
        unary(self, "exp", Saves::Output, |x| x.exp(), |y| y)
    }

    pub fn log(&self) -> Result<Var<'g, T>> {
        unary(self, "log", Saves::Input, |x| x.ln(), |x| T::one() / x)
    }

    pub fn sqrt(&self) -> Result<Var<'g, T>> {
        unary(self, "sqrt", Saves::Output, |x| x.sqrt(), |y| T::from_f64(0.5) / y)
    }

    pub fn sigmoid(&self) -> Result<Var<'g, T>> {
        unary(self, "sigmoid", Saves::Output, sigmoid_scalar, |y| y * (T::one() - y))
    }

    pub fn tanh(&self) -> Result<Var<'g, T>> {
        unary(self, "tanh", Saves::Output, |x| x.tanh(), |y| T::one() - y * y)
    }

    pub fn relu(&self) -> Result<Var<'g, T>> {
        unary(
            self,
            "relu",
            Saves::Input,
            |x| x.max(T::zero()),
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'g, T>> {
        let s = T::from_f64(slope);
        unary(
            self,
            "leaky_relu",
            Saves::Input,
            move |x| if x > T::zero() { x } else { x * s },
            move |x| if x > T::zero() { T::one() } else { s },
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Var<'g, T>> {
        unary(self, "gelu", Saves::Input, gelu_scalar, gelu_grad_scalar)
    }

    pub fn square(&self) -> Result<Var<'g, T>> {
        unary(self, "square", Saves::Input, |x| x * x, |x| x + x)
    }
}
