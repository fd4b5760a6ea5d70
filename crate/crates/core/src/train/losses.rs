use rand::seq::SliceRandom;
use rand::Rng;

use crate::nn::{Adam, Mlp};
use crate::{Error, Result};

fn check_rows(a: &[f64], b: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || a.len() != b.len() || !a.len().is_multiple_of(dim) || a.is_empty() {
        return Err(Error::contract(format!(
            "loss inputs of length {} and {} do not form rows of {dim}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.len() / dim)
}

/// Mean over samples of ‖z^s − z‖².
pub fn reconstruction_loss(zs: &[f64], z: &[f64], dim: usize) -> Result<f64> {
    let n = check_rows(zs, z, dim)?;
    Ok(zs.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `zs`.
pub fn reconstruction_grad(zs: &[f64], z: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = check_rows(zs, z, dim)? as f64;
    Ok(zs.iter().zip(z).map(|(a, b)| 2.0 * (a - b) / n).collect())
}

/// Mean over samples of ‖w ⊙ (l̂ − l)‖².
pub fn load_estimation_loss(estimate: &[f64], truth: &[f64], weights: &[f64]) -> Result<f64> {
    let n = check_rows(estimate, truth, weights.len())?;
    let d = weights.len();
    Ok(estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (a, b))| (weights[i % d] * (a - b)).powi(2))
        .sum::<f64>()
        / n as f64)
}

/// Gradient of [`load_estimation_loss`] with respect to `estimate`.
pub fn load_estimation_grad(estimate: &[f64], truth: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let n = check_rows(estimate, truth, weights.len())? as f64;
    let d = weights.len();
    Ok(estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (a, b))| 2.0 * weights[i % d].powi(2) * (a - b) / n)
        .collect())
}

/// Regression of `net(inputs)` onto `targets` with either loss: `weights`
/// selects the weighted estimation loss, `None` the reconstruction loss.
/// Runs `epochs` passes of shuffled mini-batches; returns the mean
/// mini-batch loss.
#[allow(clippy::too_many_arguments)]
pub fn supervised_epochs<R: Rng>(
    net: &mut Mlp,
    opt: &mut Adam,
    inputs: &[f64],
    targets: &[f64],
    weights: Option<&[f64]>,
    epochs: usize,
    minibatches: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let (din, dout) = (net.input_dim(), net.output_dim());
    let n = inputs.len() / din;
    if n == 0 || inputs.len() != n * din || targets.len() != n * dout {
        return Err(Error::contract("supervised data does not match the network shape"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let size = (n / minibatches.max(1)).max(1);
    let mut total = 0.0;
    let mut count = 0.0;
    let mut grads = vec![0.0; net.params.len()];
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(size) {
            let mut x = Vec::with_capacity(chunk.len() * din);
            let mut y = Vec::with_capacity(chunk.len() * dout);
            for &i in chunk {
                x.extend_from_slice(&inputs[i * din..(i + 1) * din]);
                y.extend_from_slice(&targets[i * dout..(i + 1) * dout]);
            }
            let tape = net.forward_batch(&x, chunk.len())?;
            let (loss, d_out) = match weights {
                Some(w) => (
                    load_estimation_loss(&tape.output, &y, w)?,
                    load_estimation_grad(&tape.output, &y, w)?,
                ),
                None => (
                    reconstruction_loss(&tape.output, &y, dout)?,
                    reconstruction_grad(&tape.output, &y, dout)?,
                ),
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "supervised loss".into(),
                    stats: format!("batch {} loss {loss}", chunk.len()),
                });
            }
            grads.iter_mut().for_each(|g| *g = 0.0);
            net.backward(&tape, &d_out, &mut grads, false);
            opt.step(&mut net.params, &grads, lr);
            total += loss;
            count += 1.0;
        }
    }
    Ok(total / count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_spot_values() {
        let u = [0.0, 1.0];
        assert_eq!(reconstruction_loss(&u, &u, 2).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&u, &[0.0, -1.0], 2).unwrap(), 4.0);
        assert_eq!(reconstruction_loss(&[0.0, 1.0, 1.0, 0.0], &[0.0, 1.0, -1.0, 0.0], 2).unwrap(), 2.0);
        let w = [3.0, 1.0, 10.0, 10.0];
        let l = [0.25, -0.5, 7.0, 0.01];
        assert_eq!(load_estimation_loss(&l, &l, &w).unwrap(), 0.0);
        assert_eq!(load_estimation_loss(&[0.25, -0.5, 8.0, 0.01], &l, &w).unwrap(), 100.0);
        assert_eq!(load_estimation_loss(&[1.25, -0.5, 7.0, 0.01], &l, &w).unwrap(), 9.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_violation() {
        assert!(matches!(reconstruction_loss(&[1.0, 0.0], &[1.0], 2), Err(Error::Contract(_))));
        assert!(matches!(load_estimation_loss(&[1.0; 3], &[1.0; 3], &[1.0; 4]), Err(Error::Contract(_))));
    }
}
