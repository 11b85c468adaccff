//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so near-zero
    /// gradients are compared in absolute terms.
    pub floor: f64,
    /// Coordinates probed per input; `None` probes all of them.
    pub samples_per_input: Option<usize>,
    pub seed: u64,
    /// Op whose adjoint is deliberately corrupted (negative control).
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, tol: 1e-3, floor: 1e-6, samples_per_input: None, seed: 9, corrupt: None }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.max_rel_err < self.tol)
    }

    pub fn worst(&self) -> Option<&InputReport> {
        self.inputs.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.inputs {
            writeln!(
                f,
                "{:<40} n={:<5} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e}) {}",
                r.name,
                r.checked,
                r.max_rel_err,
                r.worst_index,
                r.analytic,
                r.numeric,
                if r.max_rel_err < self.tol { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: max_rel={:.3e} tol={:.1e} {}",
            self.max_rel_err(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks the gradient of `f` with respect to every named input.
///
/// `f` may return a tensor of any shape; it is reduced to a scalar by a fixed
/// random projection so that every output element contributes.
pub fn gradcheck<F>(f: F, inputs: &[(String, Tensor<f64>)], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let mut rng = Rng::new(opts.seed);
    let projection = {
        let g = Graph::inference();
        let vars: Vec<_> = inputs.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Tensor::<f64>::uniform(out.shape(), -1.0, 1.0, &mut rng)
    };
    let scalar = |g: &Graph<f64>, vals: &[Tensor<f64>]| -> Result<f64> {
        let vars: Vec<_> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(g, &vars)?;
        Ok(out.value().data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let graph = Graph::new();
    if let Some(op) = &opts.corrupt {
        graph.corrupt_adjoint(op);
    }
    let leaves: Vec<_> = inputs.iter().map(|(_, t)| graph.leaf(t.clone())).collect();
    let out = f(&graph, &leaves)?;
    let loss = out.mul(&graph.constant(projection.clone()))?.sum_all()?;
    let grads = graph.backward(&loss)?;

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (k, (name, t)) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[k]);
        let mut coords: Vec<usize> = (0..t.numel()).collect();
        if let Some(n) = opts.samples_per_input.filter(|&n| n < coords.len()) {
            rng.shuffle(&mut coords);
            coords.truncate(n);
            coords.sort_unstable();
        }
        let mut rep = InputReport {
            name: name.clone(),
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &coords {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + opts.step;
            let plus = scalar(&Graph::inference(), &values)?;
            values[k].data_mut()[i] = orig - opts.step;
            let minus = scalar(&Graph::inference(), &values)?;
            values[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric, opts.floor);
            if err > rep.max_rel_err {
                rep.max_rel_err = err;
                rep.worst_index = i;
                rep.analytic = a;
                rep.numeric = numeric;
            }
        }
        reports.push(rep);
    }
    Ok(GradcheckReport { inputs: reports, tol: opts.tol })
}

type CaseFn = for<'g> fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>;

/// One primitive under test: input shapes, an input transform and the op.
struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    positive: bool,
    run: CaseFn,
}

const CASES: &[Case] = &[
    Case { name: "add", shapes: &[&[2, 3, 4], &[3, 4]], positive: false, run: |_, v| v[0].add(&v[1]) },
    Case { name: "sub", shapes: &[&[2, 3], &[2, 1]], positive: false, run: |_, v| v[0].sub(&v[1]) },
    Case { name: "mul", shapes: &[&[2, 3, 4], &[2, 1, 4]], positive: false, run: |_, v| v[0].mul(&v[1]) },
    Case { name: "div", shapes: &[&[3, 4], &[4]], positive: true, run: |_, v| v[0].div(&v[1]) },
    Case { name: "neg", shapes: &[&[5]], positive: false, run: |_, v| v[0].neg() },
    Case { name: "scale", shapes: &[&[5]], positive: false, run: |_, v| v[0].scale(-1.7) },
    Case { name: "add_scalar", shapes: &[&[5]], positive: false, run: |_, v| v[0].add_scalar(0.3) },
    Case { name: "exp", shapes: &[&[6]], positive: false, run: |_, v| v[0].exp() },
    Case { name: "log", shapes: &[&[6]], positive: true, run: |_, v| v[0].log() },
    Case { name: "sqrt", shapes: &[&[6]], positive: true, run: |_, v| v[0].sqrt() },
    Case { name: "sigmoid", shapes: &[&[6]], positive: false, run: |_, v| v[0].sigmoid() },
    Case { name: "tanh", shapes: &[&[6]], positive: false, run: |_, v| v[0].tanh() },
    Case { name: "relu", shapes: &[&[8]], positive: false, run: |_, v| v[0].relu() },
    Case { name: "leaky_relu", shapes: &[&[8]], positive: false, run: |_, v| v[0].leaky_relu(0.1) },
    Case { name: "gelu", shapes: &[&[8]], positive: false, run: |_, v| v[0].gelu() },
    Case { name: "square", shapes: &[&[6]], positive: false, run: |_, v| v[0].square() },
    Case { name: "sum_all", shapes: &[&[2, 3]], positive: false, run: |_, v| v[0].sum_all() },
    Case { name: "mean_all", shapes: &[&[2, 3]], positive: false, run: |_, v| v[0].mean_all() },
    Case { name: "sum_axis", shapes: &[&[2, 3, 4]], positive: false, run: |_, v| v[0].sum_axis(1, false) },
    Case { name: "mean_axis", shapes: &[&[2, 3, 4]], positive: false, run: |_, v| v[0].mean_axis(-1, true) },
    Case { name: "max_axis", shapes: &[&[3, 5]], positive: false, run: |_, v| v[0].max_axis(1, false) },
    Case { name: "global_avg_pool", shapes: &[&[2, 3, 4, 4]], positive: false, run: |_, v| v[0].global_avg_pool() },
    Case { name: "reshape", shapes: &[&[2, 6]], positive: false, run: |_, v| v[0].reshape(&[3, 4]) },
    Case { name: "permute", shapes: &[&[2, 3, 4]], positive: false, run: |_, v| v[0].permute(&[2, 0, 1]) },
    Case { name: "transpose_last", shapes: &[&[2, 3, 4]], positive: false, run: |_, v| v[0].transpose_last() },
    Case {
        name: "concat",
        shapes: &[&[1, 2, 3], &[1, 4, 3]],
        positive: false,
        run: |_, v| Var::concat(&v[..2], 1),
    },
    Case { name: "narrow", shapes: &[&[3, 5]], positive: false, run: |_, v| v[0].narrow(1, 1, 3) },
    Case {
        name: "split",
        shapes: &[&[4, 5]],
        positive: false,
        run: |_, v| {
            let parts = v[0].split(0, &[1, 3])?;
            parts[1].mul(&parts[0])
        },
    },
    Case { name: "pad2d", shapes: &[&[1, 2, 3, 3]], positive: false, run: |_, v| v[0].pad2d(1) },
    Case { name: "broadcast_to", shapes: &[&[3, 1]], positive: false, run: |_, v| v[0].broadcast_to(&[2, 3, 4]) },
    Case { name: "gather_rows", shapes: &[&[4, 3]], positive: false, run: |_, v| v[0].gather_rows(&[0, 2, 2, 3, 0]) },
    Case { name: "matmul", shapes: &[&[2, 3, 4], &[2, 4, 5]], positive: false, run: |_, v| v[0].matmul(&v[1]) },
    Case { name: "matmul_shared", shapes: &[&[2, 3, 4], &[4, 2]], positive: false, run: |_, v| v[0].matmul(&v[1]) },
    Case {
        name: "linear",
        shapes: &[&[2, 3, 4], &[5, 4], &[5]],
        positive: false,
        run: |_, v| v[0].linear(&v[1], Some(&v[2])),
    },
    Case {
        name: "conv2d",
        shapes: &[&[2, 4, 5, 5], &[6, 2, 3, 3], &[6]],
        positive: false,
        run: |_, v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1, 2),
    },
    Case {
        name: "conv2d_depthwise",
        shapes: &[&[1, 3, 4, 4], &[3, 1, 3, 3]],
        positive: false,
        run: |_, v| v[0].conv2d(&v[1], None, 1, 1, 3),
    },
    Case {
        name: "conv_transpose2d",
        shapes: &[&[2, 4, 3, 3], &[4, 2, 2, 2], &[2]],
        positive: false,
        run: |_, v| v[0].conv_transpose2d(&v[1], Some(&v[2]), 2, 0),
    },
    Case {
        name: "conv_transpose2d_overlap",
        shapes: &[&[1, 2, 3, 3], &[2, 3, 3, 3]],
        positive: false,
        run: |_, v| v[0].conv_transpose2d(&v[1], None, 2, 1),
    },
    Case { name: "softmax", shapes: &[&[3, 4, 2]], positive: false, run: |_, v| v[0].softmax(1) },
    Case { name: "log_softmax", shapes: &[&[3, 5]], positive: false, run: |_, v| v[0].log_softmax(-1) },
    Case {
        name: "layer_norm",
        shapes: &[&[3, 6], &[6], &[6]],
        positive: false,
        run: |_, v| v[0].layer_norm(&v[1], &v[2], 1e-5),
    },
    Case {
        name: "upsample_bilinear2d",
        shapes: &[&[1, 2, 3, 3]],
        positive: false,
        run: |_, v| v[0].upsample_bilinear2d(6, 6),
    },
];

/// Names of every primitive covered by [`check_primitives`].
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Gradchecks every differentiable primitive on inputs drawn from `seed`.
pub fn check_primitives(seed: u64, opts: &GradcheckOptions) -> Result<Vec<(&'static str, GradcheckReport)>> {
    let mut rng = Rng::new(seed);
    CASES
        .iter()
        .map(|case| {
            let inputs: Vec<(String, Tensor<f64>)> = case
                .shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let t = Tensor::<f64>::randn(s, 1.0, &mut rng);
                    let t = if case.positive { t.map(|v| v.abs() + 0.5) } else { t };
                    (format!("{}.in{i}", case.name), t)
                })
                .collect();
            let o = GradcheckOptions { seed: seed ^ 0x5eed, ..opts.clone() };
            Ok((case.name, gradcheck(case.run, &inputs, &o)?))
        })
        .collect()
}
