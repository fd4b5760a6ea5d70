use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, View};
use crate::{Error, Result};

/// Guard for the unit-sphere projection: y = x / max(‖x‖, ε).
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    /// Project the output onto the unit sphere.
    #[serde(default)]
    pub normalize: bool,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, normalize: bool) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            normalize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::contract(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input);
        dims.extend(&self.hidden);
        dims.push(self.output);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Multilayer perceptron with parameters in one flat vector. Each layer
/// stores its weight matrix row-major (`fan_out × fan_in`) followed by its
/// bias, layers in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations cached by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub batch: usize,
    /// Input of every layer (the network input first).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Vec<f64>>,
    /// Network output (after the sphere projection when enabled).
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Mlp {
            spec,
            params: vec![0.0; n],
        })
    }

    /// Orthogonal weights (gain √2 on hidden layers, `output_gain` on the last
    /// layer) and zero biases.
    pub fn orthogonal<R: Rng>(spec: MlpSpec, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(spec)?;
        let layers = net.spec.layers();
        let last = layers.len() - 1;
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let gain = if l == last { output_gain } else { std::f64::consts::SQRT_2 };
            let w = orthogonal_matrix(fan_out, fan_in, rng);
            for r in 0..fan_out {
                for c in 0..fan_in {
                    net.params[offset + r * fan_in + c] = gain * w[(r, c)];
                }
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, spec needs {}",
                params.len(),
                spec.param_count()
            )));
        }
        Ok(Mlp { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Tape> {
        if input.len() != batch * self.spec.input {
            return Err(Error::contract(format!(
                "network expects {} inputs per row, got {} values for {batch} rows",
                self.spec.input,
                input.len()
            )));
        }
        let layers = self.spec.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut x = input.to_vec();
        let mut offset = 0;
        let last = layers.len() - 1;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; batch * fan_out];
            for row in z.chunks_exact_mut(fan_out) {
                row.copy_from_slice(b);
            }
            gemm(View::new(&x, batch, fan_in), View::new(w, fan_out, fan_in).t(), &mut z, 1.0);
            let next = if l == last { z.clone() } else { z.iter().map(|&v| elu(v)).collect() };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        if self.spec.normalize {
            for row in x.chunks_exact_mut(self.spec.output) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Tape {
            batch,
            inputs,
            pre,
            output: x,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Reverse pass: accumulates parameter gradients into `grads` (same
    /// layout as `params`) and returns the input gradient when requested.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grads: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let batch = tape.batch;
        let layers = self.spec.layers();
        assert_eq!(d_out.len(), batch * self.spec.output, "output gradient shape");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer shape");
        let last = layers.len() - 1;
        let mut dz = d_out.to_vec();
        if self.spec.normalize {
            let raw = &tape.pre[last];
            let out = self.spec.output;
            for ((dz_row, y), x) in dz
                .chunks_exact_mut(out)
                .zip(tape.output.chunks_exact(out))
                .zip(raw.chunks_exact(out))
            {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > NORM_EPS {
                    let dot: f64 = dz_row.iter().zip(y).map(|(a, b)| a * b).sum();
                    for (d, yv) in dz_row.iter_mut().zip(y) {
                        *d = (*d - yv * dot) / norm;
                    }
                } else {
                    dz_row.iter_mut().for_each(|d| *d /= NORM_EPS);
                }
            }
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut o = 0;
        for &(i, out) in &layers {
            offsets.push(o);
            o += i * out + out;
        }
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            if l != last {
                for (d, &z) in dz.iter_mut().zip(&tape.pre[l]) {
                    *d *= elu_grad(z);
                }
            }
            let x = &tape.inputs[l];
            {
                let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                gemm(View::new(&dz, batch, fan_out).t(), View::new(x, batch, fan_in), gw, 1.0);
                for row in dz.chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut dx = vec![0.0; batch * fan_in];
            gemm(View::new(&dz, batch, fan_out), View::new(w, fan_out, fan_in), &mut dx, 0.0);
            dz = dx;
        }
        Some(dz)
    }
}

fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // QR of a tall Gaussian matrix; transpose back for wide shapes.
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::from_fn(tall_r, tall_c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..tall_c {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(5, &[7, 3], 2, false)).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_normalizes_3_4_5() {
        let spec = MlpSpec::new(2, &[], 2, true);
        let net = Mlp::from_params(spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = net.forward(&[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn elu_of_minus_one() {
        assert!((elu(-1.0) - (-1f64).exp() + 1.0).abs() < 1e-16);
        assert!((elu(-1.0) + 0.6321).abs() < 1e-4);
        assert_eq!(elu(2.5), 2.5);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let net = Mlp::zeros(MlpSpec::new(3, &[4], 2, false)).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn orthogonal_rows_are_orthonormal_times_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::orthogonal(MlpSpec::new(6, &[], 4, false), 2.0, &mut rng).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..6).map(|c| net.params[a * 6 + c] * net.params[b * 6 + c]).sum();
                let want = if a == b { 4.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_match_single_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::orthogonal(MlpSpec::new(3, &[8, 5], 2, true), 1.0, &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0, 0.7, 0.1, -0.4];
        let both = net.forward_batch(&x, 2).unwrap().output;
        assert_eq!(&both[..2], &net.forward(&x[..3]).unwrap()[..]);
        assert_eq!(&both[2..], &net.forward(&x[3..]).unwrap()[..]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::orthogonal(MlpSpec::new(3, &[4], 2, false), 1.0, &mut rng).unwrap();
        let tape = net.forward_batch(&[1.0, 2.0, 3.0], 1).unwrap();
        let mut g = vec![0.0; net.params.len()];
        net.backward(&tape, &[0.0, 0.0], &mut g, false);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
