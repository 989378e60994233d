//! Small neural-net primitives shared across the model: GELU, single-vector
//! linear layers, and the two-layer MLP used for feature projection and
//! grounding-score heads.
//!
//! All math runs in f64. Weights are stored row-major as `[out][in]`, so
//! `y = W x + b` reads one contiguous row per output unit.

/// GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu`] with respect to its input.
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = W x + b` where `w` is `[dout][din]` row-major.
pub fn linear(w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    let din = x.len();
    debug_assert_eq!(w.len(), y.len() * din);
    debug_assert_eq!(b.len(), y.len());
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * din..(o + 1) * din];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo = acc;
    }
}

/// Backward of [`linear`]: accumulates into `dw`, `db`, `dx`.
/// `dx` may be empty when the input gradient is not needed.
pub fn linear_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let din = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &w[o * din..(o + 1) * din];
        let drow = &mut dw[o * din..(o + 1) * din];
        for i in 0..din {
            drow[i] += g * x[i];
        }
        if !dx.is_empty() {
            for i in 0..din {
                dx[i] += g * row[i];
            }
        }
    }
}

/// Shape of a two-layer GELU MLP: `input -> hidden -> output` with the
/// nonlinearity after the first layer only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output }
    }

    pub fn w1_len(&self) -> usize {
        self.hidden * self.input
    }

    pub fn w2_len(&self) -> usize {
        self.output * self.hidden
    }

    /// Total parameter count in (w1, b1, w2, b2) order.
    pub fn param_len(&self) -> usize {
        self.w1_len() + self.hidden + self.w2_len() + self.output
    }
}

/// Parameter slices of one MLP, in a fixed (w1, b1, w2, b2) split.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

/// Gradient slices matching [`MlpParams`].
pub struct MlpGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn mlp_forward(shape: MlpShape, p: MlpParams<'_>, x: &[f64]) -> MlpTrace {
    debug_assert_eq!(x.len(), shape.input);
    let mut pre = vec![0.0; shape.hidden];
    linear(p.w1, p.b1, x, &mut pre);
    let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
    let mut out = vec![0.0; shape.output];
    linear(p.w2, p.b2, &act, &mut out);
    MlpTrace { x: x.to_vec(), pre, act, out }
}

/// Backward of [`mlp_forward`]. Accumulates parameter gradients and returns
/// the gradient with respect to the input.
pub fn mlp_backward(
    shape: MlpShape,
    p: MlpParams<'_>,
    trace: &MlpTrace,
    dout: &[f64],
    g: &mut MlpGrads<'_>,
) -> Vec<f64> {
    debug_assert_eq!(dout.len(), shape.output);
    let mut dact = vec![0.0; shape.hidden];
    linear_backward(p.w2, &trace.act, dout, g.w2, g.b2, &mut dact);
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&trace.pre)
        .map(|(&da, &pre)| da * gelu_grad(pre))
        .collect();
    let mut dx = vec![0.0; shape.input];
    linear_backward(p.w1, &trace.x, &dpre, g.w1, g.b1, &mut dx);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // large |x| saturates to x or 0
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0).abs() < 1e-9);
        // tanh approximation at 1.0
        assert!((gelu(1.0) - 0.841192).abs() < 1e-5);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let eps = 1e-6;
        for &x in &[-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0] {
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!(
                (gelu_grad(x) - fd).abs() < 1e-8,
                "x={x}: analytic {} vs fd {fd}",
                gelu_grad(x)
            );
        }
    }

    #[test]
    fn sigmoid_symmetry_and_range() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert!(sigmoid(1000.0) <= 1.0);
    }

    #[test]
    fn linear_known_values() {
        // 2x3 weight, y = Wx + b
        let w = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let b = [0.5, -0.5];
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 2];
        linear(&w, &b, &x, &mut y);
        assert_eq!(y, [1.0 + 0.0 - 3.0 + 0.5, 2.0 + 2.0 + 1.5 - 0.5]);
    }

    #[test]
    fn mlp_backward_matches_finite_difference() {
        let shape = MlpShape::new(3, 4, 2);
        let n = shape.param_len();
        let mut params = vec![0.0; n];
        // deterministic non-trivial fill
        for (i, p) in params.iter_mut().enumerate() {
            *p = ((i as f64) * 0.37).sin() * 0.5;
        }
        let x = [0.3, -0.7, 1.1];
        let dout = [1.0, -2.0];

        let split = |v: &[f64]| {
            let (w1, rest) = v.split_at(shape.w1_len());
            let (b1, rest) = rest.split_at(shape.hidden);
            let (w2, b2) = rest.split_at(shape.w2_len());
            (w1.to_vec(), b1.to_vec(), w2.to_vec(), b2.to_vec())
        };

        let (w1, b1, w2, b2) = split(&params);
        let p = MlpParams { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
        let trace = mlp_forward(shape, p, &x);

        let mut gw1 = vec![0.0; shape.w1_len()];
        let mut gb1 = vec![0.0; shape.hidden];
        let mut gw2 = vec![0.0; shape.w2_len()];
        let mut gb2 = vec![0.0; shape.output];
        let dx = mlp_backward(
            shape,
            p,
            &trace,
            &dout,
            &mut MlpGrads { w1: &mut gw1, b1: &mut gb1, w2: &mut gw2, b2: &mut gb2 },
        );

        let scalar = |params: &[f64], x: &[f64]| {
            let (w1, b1, w2, b2) = split(params);
            let p = MlpParams { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
            let t = mlp_forward(shape, p, x);
            t.out.iter().zip(&dout).map(|(o, d)| o * d).sum::<f64>()
        };

        let analytic: Vec<f64> = gw1.iter().chain(&gb1).chain(&gw2).chain(&gb2).copied().collect();
        let eps = 1e-6;
        for i in 0..n {
            let mut plus = params.clone();
            plus[i] += eps;
            let mut minus = params.clone();
            minus[i] -= eps;
            let fd = (scalar(&plus, &x) - scalar(&minus, &x)) / (2.0 * eps);
            assert!(
                (analytic[i] - fd).abs() < 1e-6,
                "param {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
        for i in 0..3 {
            let mut xp = x;
            xp[i] += eps;
            let mut xm = x;
            xm[i] -= eps;
            let fd = (scalar(&params, &xp) - scalar(&params, &xm)) / (2.0 * eps);
            assert!((dx[i] - fd).abs() < 1e-6, "input {i}: analytic {} vs fd {fd}", dx[i]);
        }
    }
}
