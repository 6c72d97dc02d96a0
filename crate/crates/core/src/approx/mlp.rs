use rand::Rng;

use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Input<'a> {
    OneHot(usize),
    Dense(&'a [f64]),
}

/// Fully connected network, ReLU on hidden layers, identity output.
///
/// Parameters live in one flat vector: for each layer, the `out x in`
/// row-major weight matrix followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut n = 0;
    for w in sizes.windows(2) {
        offsets.push(n);
        n += w[0] * w[1] + w[1];
    }
    (offsets, n)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let (offsets, n) = layout(sizes);
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
            offsets,
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn uniform_fan_in(sizes: &[usize], rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(sizes);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let off = m.offsets[l];
            for p in &mut m.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        m
    }

    pub(crate) fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return None;
        }
        let (offsets, n) = layout(&sizes);
        (params.len() == n).then_some(Self {
            sizes,
            params,
            offsets,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes nonempty")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    fn first_layer(&self, x: Input<'_>) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[0], self.sizes[1]);
        let w = self.weights(0);
        let mut z = self.biases(0).to_vec();
        match x {
            Input::OneHot(i) => {
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo += w[o * n_in + i];
                }
            }
            Input::Dense(v) => {
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo += dot(&w[o * n_in..(o + 1) * n_in], v);
                }
            }
        }
        debug_assert_eq!(z.len(), n_out);
        z
    }

    fn dense_layer(&self, l: usize, h: &[f64]) -> Vec<f64> {
        let n_in = self.sizes[l];
        let w = self.weights(l);
        self.biases(l)
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w[o * n_in..(o + 1) * n_in], h))
            .collect()
    }

    fn relu_in_place(z: &mut [f64]) {
        for v in z {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Post-activation outputs of every layer; the last entry is the network
    /// output.
    pub(crate) fn forward_cached(&self, x: Input<'_>) -> Vec<Vec<f64>> {
        let last = self.n_layers() - 1;
        let mut acts = Vec::with_capacity(self.n_layers());
        let mut h = self.first_layer(x);
        if last > 0 {
            Self::relu_in_place(&mut h);
        }
        acts.push(h);
        for l in 1..self.n_layers() {
            let mut z = self.dense_layer(l, acts.last().expect("previous layer"));
            if l < last {
                Self::relu_in_place(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub(crate) fn forward(&self, x: Input<'_>) -> Vec<f64> {
        self.forward_cached(x).pop().expect("output layer")
    }

    /// Add `d(g_out . output)/d(params)` for one sample into `grad`.
    pub(crate) fn backward_accumulate(
        &self,
        x: Input<'_>,
        acts: &[Vec<f64>],
        g_out: &[f64],
        grad: &mut [f64],
    ) {
        let n_layers = self.n_layers();
        let mut delta = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let (w_grad, rest) = grad[off..].split_at_mut(n_in * n_out);
            let b_grad = &mut rest[..n_out];
            for (bg, d) in b_grad.iter_mut().zip(&delta) {
                *bg += d;
            }
            if l == 0 {
                match x {
                    Input::OneHot(i) => {
                        for (o, &d) in delta.iter().enumerate() {
                            w_grad[o * n_in + i] += d;
                        }
                    }
                    Input::Dense(v) => {
                        for (o, &d) in delta.iter().enumerate() {
                            if d != 0.0 {
                                axpy(d, v, &mut w_grad[o * n_in..(o + 1) * n_in]);
                            }
                        }
                    }
                }
                break;
            }
            let h_in = &acts[l - 1];
            let w = self.weights(l);
            let mut d_in = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, h_in, &mut w_grad[o * n_in..(o + 1) * n_in]);
                    axpy(d, &w[o * n_in..(o + 1) * n_in], &mut d_in);
                }
            }
            // ReLU derivative, taken as 0 at the kink.
            for (di, &h) in d_in.iter_mut().zip(h_in) {
                if h <= 0.0 {
                    *di = 0.0;
                }
            }
            delta = d_in;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn parameter_count() {
        let m = Mlp::zeros(&[4, 3, 2]);
        assert_eq!(m.params().len(), 4 * 3 + 3 + 3 * 2 + 2);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = Mlp::uniform_fan_in(&[16, 8, 2], &mut seeded(0));
        let w0 = m.weights(0);
        assert!(w0.iter().all(|w| w.abs() <= 0.25));
        let w1 = m.weights(1);
        assert!(w1.iter().all(|w| w.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
