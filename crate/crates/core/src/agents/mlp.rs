//! Dense ReLU network with hand-written reverse mode.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;

/// Layer widths: `input -> hidden[0] -> ... -> hidden[n-1] -> output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl MlpSpec {
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    pub layers: Vec<Dense>,
}

/// Layer inputs saved by a batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].nrows()
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .widths()
            .windows(2)
            .map(|p| Dense {
                w: Array2::zeros((p[0], p[1])),
                b: Array1::zeros(p[1]),
            })
            .collect();
        Mlp { spec, layers }
    }

    /// He-style uniform fan-in initialisation, zero biases. The output layer
    /// is scaled by `output_gain` so fresh heads start near zero.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Self {
        let mut m = Mlp::zeros(spec);
        let n = m.layers.len();
        for (i, layer) in m.layers.iter_mut().enumerate() {
            let fan_in = layer.w.nrows() as f64;
            let mut bound = (6.0 / fan_in).sqrt();
            if i + 1 == n {
                bound *= output_gain;
            }
            layer.w.mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        m
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn zeros_like(&self) -> Self {
        Mlp::zeros(self.spec.clone())
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    pub fn check_finite(&self) -> Result<(), AgentError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(AgentError::NonFiniteWeights)
        }
    }

    /// Visit parameters in a fixed order: per layer, weights (row-major) then biases.
    pub fn visit<F: FnMut(&[f64])>(&self, mut f: F) {
        for l in &self.layers {
            f(l.w.as_slice().expect("standard layout"));
            f(l.b.as_slice().expect("standard layout"));
        }
    }

    pub fn visit_mut<F: FnMut(&mut [f64])>(&mut self, mut f: F) {
        for l in &mut self.layers {
            f(l.w.as_slice_mut().expect("standard layout"));
            f(l.b.as_slice_mut().expect("standard layout"));
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(|s| out.extend_from_slice(s));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), AgentError> {
        if flat.len() != self.param_count() {
            return Err(AgentError::ShapeMismatch(format!(
                "flat parameter vector has {} entries, network needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        });
        Ok(())
    }

    /// Mutable access to parameter `index` in [`Mlp::visit`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let w = l.w.as_slice_mut().expect("standard layout");
            if index < w.len() {
                return &mut w[index];
            }
            index -= w.len();
            let b = l.b.as_slice_mut().expect("standard layout");
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.scaled_add(scale, &b.w);
            a.b.scaled_add(scale, &b.b);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        let mut s = 0.0;
        self.visit(|x| s += x.iter().map(|v| v * v).sum::<f64>());
        s
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache), AgentError> {
        if x.ncols() != self.spec.input {
            return Err(AgentError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w);
            a += &l.b;
            if i != last {
                a.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = a;
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, AgentError> {
        if x.ncols() != self.spec.input {
            return Err(AgentError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.spec.input
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = h.dot(&l.w);
            a += &l.b;
            if i != last {
                a.mapv_inplace(|v| v.max(0.0));
            }
            h = a;
        }
        Ok(h)
    }

    /// Parameter gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: ArrayView2<f64>) -> Result<Mlp, AgentError> {
        if d_out.nrows() != cache.batch() || d_out.ncols() != self.spec.output {
            return Err(AgentError::ShapeMismatch(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                d_out.nrows(),
                d_out.ncols(),
                cache.batch(),
                self.spec.output
            )));
        }
        let mut grads = self.zeros_like();
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let h = &cache.inputs[i];
            // write into the zeroed standard-layout buffer
            general_mat_mul(1.0, &h.t(), &delta, 0.0, &mut grads.layers[i].w);
            grads.layers[i].b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].w.t());
                // h = relu(a): derivative is 1 exactly where h > 0
                ndarray::Zip::from(&mut back).and(h).for_each(|g, &hv| {
                    if hv <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small() -> Mlp {
        let spec = MlpSpec {
            input: 3,
            hidden: vec![5, 4],
            output: 2,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut m = Mlp::init(spec, 1.0, &mut rng);
        for l in &mut m.layers {
            l.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(MlpSpec {
            input: 4,
            hidden: vec![8, 8],
            output: 3,
        });
        let y = m.predict(array![[1.0, 2.0, 3.0, 4.0]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_loss_bias_gradient_is_ones() {
        let m = Mlp::zeros(MlpSpec {
            input: 2,
            hidden: vec![3],
            output: 4,
        });
        let x = array![[0.5, -1.0]];
        let (_, cache) = m.forward(x.view()).unwrap();
        let g = m.backward(&cache, Array2::ones((1, 4)).view()).unwrap();
        assert_eq!(g.layers[1].b, Array1::<f64>::ones(4));
    }

    #[test]
    fn flat_roundtrip() {
        let m = small();
        let mut z = m.zeros_like();
        z.set_flat(&m.to_flat()).unwrap();
        assert_eq!(z, m);
        assert!(z.set_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn shape_mismatch_reported() {
        let m = small();
        assert!(matches!(m.forward(array![[1.0, 2.0]].view()), Err(AgentError::ShapeMismatch(_))));
        let (_, cache) = m.forward(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert!(matches!(
            m.backward(&cache, Array2::ones((1, 3)).view()),
            Err(AgentError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut m = small();
        let x = array![[0.3, -0.7, 1.1], [1.0, 0.2, -0.4]];
        let wts = array![[0.7, -1.3], [0.2, 0.9]];
        let loss = |m: &Mlp| (m.predict(x.view()).unwrap() * &wts).sum();
        let (_, cache) = m.forward(x.view()).unwrap();
        let g = m.backward(&cache, wts.view()).unwrap().to_flat();
        let h = 1e-6;
        for i in 0..m.param_count() {
            let orig = *m.param_mut(i);
            *m.param_mut(i) = orig + h;
            let up = loss(&m);
            *m.param_mut(i) = orig - h;
            let dn = loss(&m);
            *m.param_mut(i) = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }
}
