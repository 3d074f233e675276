use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

/// A dense layer addressed by offsets into a flat parameter array. Weights are
/// stored row-major as `out × in`, followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }

    fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &p[self.offset..self.offset + self.weight_len()])
            .expect("layer shape")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.weight_len();
        ArrayView1::from(&p[start..start + self.outputs])
    }

    pub fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p).t());
        y += &self.bias(p);
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let (wg, bg) = g[self.offset..self.offset + self.len()].split_at_mut(self.weight_len());
        let mut dw = ArrayViewMut2::from_shape((self.outputs, self.inputs), wg).expect("layer shape");
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut dw);
        let mut db = ArrayViewMut1::from(bg);
        db += &dy.sum_axis(Axis(0));
        want_input_grad.then(|| dy.dot(&self.weight(p)))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid-weighted linear unit.
pub fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

/// Multiplies `upstream` in place by silu'(x).
pub fn silu_backward(x: &Array2<f64>, upstream: &mut Array2<f64>) {
    upstream.zip_mut_with(x, |g, &v| {
        let s = sigmoid(v);
        *g *= s * (1.0 + v * (1.0 - s));
    });
}
