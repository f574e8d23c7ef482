//! Dense-layer arithmetic on flat parameter slices.
//!
//! Every trainable model in the crate stores its parameters as one `Vec<f64>`;
//! a [`Dense`] describes where one affine layer's weights (row-major,
//! `output × input`) and bias live inside that vector.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Dense {
    pub const fn new(input: usize, output: usize, offset: usize) -> Self {
        Self { input, output, offset }
    }

    pub const fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }

    /// Offset one past this layer's last parameter.
    pub const fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.output * self.input]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset + self.output * self.input..self.end()]
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let w = self.weights(params);
        self.bias(params)
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w[o * self.input..(o + 1) * self.input], x))
            .collect()
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` into `grad` and returns `Wᵀ dy`.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let w = self.weights(params);
        let mut dx = vec![0.0; self.input];
        let (gw, gb) = grad[self.offset..self.end()].split_at_mut(self.output * self.input);
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = o * self.input;
            for i in 0..self.input {
                gw[row + i] += g * x[i];
                dx[i] += g * w[row + i];
            }
            gb[o] += g;
        }
        dx
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Zeroes gradient entries whose forward activation was clipped by a rectifier.
pub fn relu_backward(activated: &[f64], dy: &mut [f64]) {
    for (g, a) in dy.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
