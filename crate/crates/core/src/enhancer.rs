//! Encoder-invariance objectives: the normalized L1 distance between clean
//! and far-field embeddings, and the Wasserstein critic objectives.

use advasr_tensor::{Element, Graph, ParamStore, Tensor, Var};

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::nn::Lengths;

/// `|z - z~|_1 / (|z|_1 + |z~|_1 + eps)` per utterance over its valid
/// `T' x D` block, averaged over the batch. Inputs are `[T', B, D]`.
pub fn l1_distance_penalty<F: Element>(
    g: &mut Graph<F>,
    z: Var,
    z_noisy: Var,
    lens: &Lengths,
    eps: f64,
) -> Result<Var> {
    let a = g.shape(z).to_vec();
    let b = g.shape(z_noisy).to_vec();
    if a != b {
        return Err(Error::ShapeMismatch {
            what: "clean and far-field embeddings",
            a,
            b,
        });
    }
    if a[1] != lens.batch() {
        return Err(Error::BatchMismatch(a[1], lens.batch()));
    }
    let per_utt = |g: &mut Graph<F>, x: Var| -> Result<Var> {
        let x = g.abs(x)?;
        let x = g.sum_axis(x, 2)?;
        Ok(g.sum_axis(x, 0)?)
    };
    let m = g.constant(lens.time_mask());
    let d = g.sub(z, z_noisy)?;
    let d = g.mul(d, m)?;
    let zm = g.mul(z, m)?;
    let zn = g.mul(z_noisy, m)?;
    let num = per_utt(g, d)?;
    let n1 = per_utt(g, zm)?;
    let n2 = per_utt(g, zn)?;
    let den = g.add(n1, n2)?;
    let den = g.add_scalar(den, F::from_f64_lossy(eps))?;
    let r = g.div(num, den)?;
    Ok(g.mean(r)?)
}

/// Wasserstein estimates on one batch of clean and one of far-field
/// embeddings.
pub struct EmLosses {
    /// `mean f(clean) - mean f(noisy)`, to be ascended by the critic.
    pub critic_objective: Var,
    /// `-mean f(noisy)`, to be descended by the encoder.
    pub generator_objective: Var,
    pub clean_mean: Var,
    pub noisy_mean: Var,
}

/// Both batches are scored in a single critic pass so its batch
/// normalization sees one shared set of statistics.
pub fn em_losses<F: Element>(
    g: &mut Graph<F>,
    critic: &Critic,
    store: &ParamStore<F>,
    clean: Var,
    noisy: Var,
    lens: &Lengths,
) -> Result<EmLosses> {
    let a = g.shape(clean).to_vec();
    let b = g.shape(noisy).to_vec();
    if a[1] != b[1] {
        return Err(Error::BatchMismatch(a[1], b[1]));
    }
    if a != b {
        return Err(Error::ShapeMismatch {
            what: "clean and far-field embeddings",
            a,
            b,
        });
    }
    let n = a[1];
    let both = g.concat(&[clean, noisy], 1)?;
    let both_lens = Lengths::new(lens.lens.iter().chain(&lens.lens).copied().collect());
    let scores = critic.score(g, store, both, &both_lens)?;
    let c = g.slice(scores, 0, 0, n)?;
    let x = g.slice(scores, 0, n, 2 * n)?;
    let clean_mean = g.mean(c)?;
    let noisy_mean = g.mean(x)?;
    let critic_objective = g.sub(clean_mean, noisy_mean)?;
    let generator_objective = g.neg(noisy_mean)?;
    Ok(EmLosses {
        critic_objective,
        generator_objective,
        clean_mean,
        noisy_mean,
    })
}

/// Critic objective from per-utterance scores, for callers that already
/// have them.
pub fn em_from_scores(clean: &[f64], noisy: &[f64]) -> Result<(f64, f64)> {
    if clean.len() != noisy.len() {
        return Err(Error::BatchMismatch(clean.len(), noisy.len()));
    }
    if clean.is_empty() {
        return Err(Error::Empty("critic batch"));
    }
    let m = clean.len() as f64;
    let c = clean.iter().sum::<f64>() / m;
    let x = noisy.iter().sum::<f64>() / m;
    Ok((c - x, -x))
}

/// Plain-value penalty for `[T', D]` embeddings of one utterance.
pub fn penalty_value(z: &Tensor<f64>, z_noisy: &Tensor<f64>, eps: f64) -> Result<f64> {
    if z.shape() != z_noisy.shape() {
        return Err(Error::ShapeMismatch {
            what: "clean and far-field embeddings",
            a: z.shape().to_vec(),
            b: z_noisy.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let mut shape = z.shape().to_vec();
    if shape.len() == 1 {
        shape.insert(0, 1);
    }
    let (t, d) = (shape[0], shape[1..].iter().product::<usize>());
    let a = g.constant(z.clone().reshape(&[t, 1, d])?);
    let b = g.constant(z_noisy.clone().reshape(&[t, 1, d])?);
    let p = l1_distance_penalty(&mut g, a, b, &Lengths::new(vec![t]), eps)?;
    Ok(g.value(p).item()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn worked_examples() {
        assert_eq!(penalty_value(&t(&[2.0, 0.0]), &t(&[1.0, 0.0]), 0.0).unwrap(), 1.0 / 3.0);
        assert_eq!(penalty_value(&t(&[1.5, -2.0]), &t(&[1.5, -2.0]), 1e-8).unwrap(), 0.0);
        let p = penalty_value(&t(&[1.0, 1.0]), &t(&[0.0, 0.0]), 1e-8).unwrap();
        assert!((p - 2.0 / (2.0 + 1e-8)).abs() < 1e-15 && p < 1.0);
        let e = penalty_value(&t(&[1.0, 1.0]), &t(&[1.0]), 1e-8).unwrap_err();
        assert!(e.to_string().contains("[2]") && e.to_string().contains("[1]"));
    }

    #[test]
    fn em_from_scores_signs() {
        assert_eq!(em_from_scores(&[0.3, 0.6], &[0.3, 0.6]).unwrap().0, 0.0);
        let (_, g1) = em_from_scores(&[0.5], &[0.4]).unwrap();
        let (_, g2) = em_from_scores(&[0.5], &[0.6]).unwrap();
        assert!(g2 < g1);
        assert!(em_from_scores(&[0.5], &[]).is_err());
    }
}
