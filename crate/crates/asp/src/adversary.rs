//! The three-term training loss: self-play + weighted paired supervision +
//! weighted adversarial (unpaired) term, plus the alternating update between
//! the training model's outputs and the discriminator.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::models::AdversaryNet;
use crate::nn::Adam;

/// Clamp bound applied to scores before logs so saturated discriminators
/// can't produce infinite losses.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Weights on the paired (`lambda0`) and unpaired/adversarial (`lambda1`)
/// loss terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl LossWeights {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        for (name, v) in [("lambda0", lambda0), ("lambda1", lambda1)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { lambda0, lambda1 })
    }
}

impl Default for LossWeights {
    /// Paired data is scarce, so it gets the heavy weight by default.
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            lambda1: 1.0,
        }
    }
}

/// The paired dataset P: input rows and the convention outputs they map to.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub domain: String,
}

impl PairedDataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, domain: &str) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Contract(format!(
                "paired dataset: {} inputs vs {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            domain: domain.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The unpaired dataset U: convention outputs with no matching inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedDataset {
    pub entries: Array2<f64>,
    pub domain: String,
}

impl UnpairedDataset {
    pub fn new(entries: Array2<f64>, domain: &str) -> Self {
        Self {
            entries,
            domain: domain.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Discriminator scores on real (U) and fake (model) batches, clamped away
/// from 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryScores {
    real_scores: Vec<f64>,
    fake_scores: Vec<f64>,
}

impl AdversaryScores {
    pub fn new(real_scores: Vec<f64>, fake_scores: Vec<f64>) -> Result<Self> {
        if real_scores.is_empty() || fake_scores.is_empty() {
            return Err(Error::Contract("adversary scores must be nonempty".into()));
        }
        for s in real_scores.iter().chain(&fake_scores) {
            if !s.is_finite() || *s < 0.0 || *s > 1.0 {
                return Err(Error::Contract(format!("score {s} outside [0, 1]")));
            }
        }
        Ok(Self {
            real_scores: real_scores.into_iter().map(clamp_score).collect(),
            fake_scores: fake_scores.into_iter().map(clamp_score).collect(),
        })
    }

    pub fn real(&self) -> &[f64] {
        &self.real_scores
    }

    pub fn fake(&self) -> &[f64] {
        &self.fake_scores
    }

    /// Fraction of correct classifications at threshold 0.5.
    pub fn accuracy(&self) -> f64 {
        let correct = self.real_scores.iter().filter(|s| **s > 0.5).count()
            + self.fake_scores.iter().filter(|s| **s <= 0.5).count();
        correct as f64 / (self.real_scores.len() + self.fake_scores.len()) as f64
    }
}

/// Mean squared error over every element of the batch.
pub fn paired_loss(predictions: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if predictions.raw_dim() != targets.raw_dim() {
        return Err(Error::Contract(format!(
            "paired loss shape mismatch: {:?} vs {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("paired loss over an empty batch".into()));
    }
    Ok((predictions - targets).mapv(|d| d * d).mean().unwrap())
}

/// Gradient of [`paired_loss`] with respect to the predictions.
pub fn paired_loss_grad(predictions: &Array2<f64>, targets: &Array2<f64>) -> Result<Array2<f64>> {
    if predictions.raw_dim() != targets.raw_dim() {
        return Err(Error::Contract("paired loss shape mismatch".into()));
    }
    let n = predictions.len() as f64;
    Ok((predictions - targets).mapv(|d| 2.0 * d / n))
}

/// Binary cross-entropy with real labeled 1 and fake labeled 0:
/// `−(mean ln real + mean ln(1−fake)) / 2`.
pub fn adversary_loss(scores: &AdversaryScores) -> f64 {
    let real: f64 = scores.real().iter().map(|s| s.ln()).sum::<f64>() / scores.real().len() as f64;
    let fake: f64 =
        scores.fake().iter().map(|s| (1.0 - s).ln()).sum::<f64>() / scores.fake().len() as f64;
    -(real + fake) / 2.0
}

/// The model's unpaired loss `L^u = mean ln(1−fake_scores)`: the negation of
/// the adversary's fake-side cross-entropy, so descending it means fooling
/// the adversary.
pub fn generator_unpaired_loss(fake_scores: &[f64]) -> Result<f64> {
    if fake_scores.is_empty() {
        return Err(Error::Contract("generator loss over an empty batch".into()));
    }
    for s in fake_scores {
        if !s.is_finite() || *s < 0.0 || *s > 1.0 {
            return Err(Error::Contract(format!("score {s} outside [0, 1]")));
        }
    }
    Ok(fake_scores
        .iter()
        .map(|s| (1.0 - clamp_score(*s)).ln())
        .sum::<f64>()
        / fake_scores.len() as f64)
}

/// dL^u/d(fake_score_i) = −1 / (n (1 − s_i)); zero where the clamp is active.
pub fn generator_unpaired_loss_grad(fake_scores: &[f64]) -> Vec<f64> {
    let n = fake_scores.len() as f64;
    fake_scores
        .iter()
        .map(|s| {
            if *s <= SCORE_CLAMP || *s >= 1.0 - SCORE_CLAMP {
                0.0
            } else {
                -1.0 / (n * (1.0 - s))
            }
        })
        .collect()
}

/// Eq.-3 composition: `l_sp + lambda0 * l_p + lambda1 * l_u`.
pub fn asp_total_loss(l_sp: f64, l_p: f64, l_u: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("l_sp", l_sp), ("l_p", l_p), ("l_u", l_u)] {
        if !v.is_finite() {
            return Err(Error::Contract(format!(
                "non-finite loss component {name} = {v}"
            )));
        }
    }
    Ok(l_sp + weights.lambda0 * l_p + weights.lambda1 * l_u)
}

/// Result of one alternating adversarial update.
#[derive(Debug, Clone)]
pub struct AdversarialStepResult {
    pub adversary_loss: f64,
    pub generator_loss: f64,
    /// dL^u / d(model output), same shape as the model output batch. The
    /// caller backpropagates this through the training model.
    pub model_output_grads: Array2<f64>,
    /// Adversary accuracy on the batch after its update(s).
    pub adversary_accuracy: f64,
}

/// Perform `update_ratio` adversary gradient steps (real = U rows, fake =
/// model outputs), then compute the generator loss and its gradient with
/// respect to the model outputs. The model itself is *not* updated here; the
/// returned gradient is the model's unpaired-loss contribution.
pub fn adversarial_step(
    adversary: &mut AdversaryNet,
    optimizer: &mut Adam,
    unpaired_batch: &Array2<f64>,
    model_output_batch: &Array2<f64>,
    update_ratio: usize,
) -> Result<AdversarialStepResult> {
    if unpaired_batch.nrows() == 0 || model_output_batch.nrows() == 0 {
        return Err(Error::Contract(
            "adversarial step needs nonempty batches".into(),
        ));
    }
    if unpaired_batch.ncols() != model_output_batch.ncols() {
        return Err(Error::Contract(format!(
            "U entries are {}-d but model outputs are {}-d",
            unpaired_batch.ncols(),
            model_output_batch.ncols()
        )));
    }
    if unpaired_batch.ncols() != adversary.input_dim() {
        return Err(Error::Contract(format!(
            "adversary expects {}-d inputs, got {}",
            adversary.input_dim(),
            unpaired_batch.ncols()
        )));
    }
    if update_ratio == 0 {
        return Err(Error::Contract("update_ratio must be >= 1".into()));
    }

    let n_real = unpaired_batch.nrows() as f64;
    let n_fake = model_output_batch.nrows() as f64;
    for _ in 0..update_ratio {
        // Adversary ascends ln(real) and ln(1 - fake); as a loss:
        // dL/d(real_i) = -1/(2 n_r real_i), dL/d(fake_i) = 1/(2 n_f (1-fake_i)).
        let real_cache = adversary.mlp.forward_cached(unpaired_batch);
        let fake_cache = adversary.mlp.forward_cached(model_output_batch);
        let real_grad = Array2::from_shape_fn((unpaired_batch.nrows(), 1), |(i, _)| {
            let s = clamp_score(real_cache.output()[(i, 0)]);
            -1.0 / (2.0 * n_real * s)
        });
        let fake_grad = Array2::from_shape_fn((model_output_batch.nrows(), 1), |(i, _)| {
            let s = clamp_score(fake_cache.output()[(i, 0)]);
            1.0 / (2.0 * n_fake * (1.0 - s))
        });
        let (mut grads, _) = adversary.mlp.backward(&real_cache, &real_grad);
        let (fake_grads, _) = adversary.mlp.backward(&fake_cache, &fake_grad);
        grads.add_scaled(&fake_grads, 1.0);
        optimizer.step(&mut adversary.mlp, &grads);
    }

    // Post-update losses and the generator gradient through the (now fixed)
    // adversary.
    let real_scores = adversary.forward_scores(unpaired_batch)?;
    let fake_cache = adversary.mlp.forward_cached(model_output_batch);
    let fake_scores: Vec<f64> = fake_cache.output().column(0).to_vec();
    let scores = AdversaryScores::new(real_scores, fake_scores.clone())?;
    let adv_loss = adversary_loss(&scores);
    let gen_loss = generator_unpaired_loss(&fake_scores)?;
    let d_scores = generator_unpaired_loss_grad(&fake_scores);
    let grad_out = Array2::from_shape_vec((fake_scores.len(), 1), d_scores).expect("column shape");
    let (_, model_output_grads) = adversary.mlp.backward(&fake_cache, &grad_out);
    Ok(AdversarialStepResult {
        adversary_loss: adv_loss,
        generator_loss: gen_loss,
        model_output_grads,
        adversary_accuracy: scores.accuracy(),
    })
}

/// Mean and per-dimension variance of a batch; used to compare a model's
/// output marginal against U.
pub fn batch_moments(batch: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = batch.mean_axis(Axis(0)).expect("nonempty batch");
    let var = batch.var_axis(Axis(0), 0.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn paired_loss_examples() {
        let p = arr2(&[[1.0, 2.0]]);
        assert_eq!(paired_loss(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(paired_loss(&p, &arr2(&[[0.0, 0.0]])).unwrap(), 2.5);
        let p = arr2(&[[1.0, 1.0], [0.0, 0.0]]);
        let t = Array2::zeros((2, 2));
        assert_relative_eq!(paired_loss(&p, &t).unwrap(), 0.5);
        assert!(paired_loss(&p, &Array2::zeros((1, 2))).is_err());
        assert!(paired_loss(&Array2::zeros((0, 2)), &Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn adversary_loss_examples() {
        let s = AdversaryScores::new(vec![0.9], vec![0.5]).unwrap();
        assert_relative_eq!(
            adversary_loss(&s),
            -(0.9f64.ln() + 0.5f64.ln()) / 2.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(adversary_loss(&s), 0.39925, epsilon = 1e-5);

        // Perfect discrimination limit.
        let eps = 1e-6;
        let s = AdversaryScores::new(vec![1.0 - eps], vec![eps]).unwrap();
        assert!(adversary_loss(&s) < 1e-5);

        // Chance level.
        let s = AdversaryScores::new(vec![0.5], vec![0.5]).unwrap();
        assert_relative_eq!(adversary_loss(&s), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_relative_eq!(adversary_loss(&s), 0.69315, epsilon = 1e-5);

        // Clamping keeps saturated scores finite.
        let s = AdversaryScores::new(vec![1.0], vec![0.0]).unwrap();
        assert!(adversary_loss(&s).is_finite());
        assert!(AdversaryScores::new(vec![], vec![0.5]).is_err());
    }

    #[test]
    fn adversary_loss_nonnegative_and_ln2_at_equality() {
        let mut rng = stream_rng(21, "adv-test");
        for _ in 0..200 {
            let r: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            assert!(adversary_loss(&AdversaryScores::new(r.clone(), f).unwrap()) >= 0.0);
            // real == fake elementwise -> exactly ln 2? Only when scores are
            // 0.5; in general BCE at equal vectors stays >= ln 2.
            let l = adversary_loss(&AdversaryScores::new(r.clone(), r).unwrap());
            assert!(l >= std::f64::consts::LN_2 - 1e-12);
        }
    }

    #[test]
    fn generator_loss_examples() {
        assert_relative_eq!(
            generator_unpaired_loss(&[0.5]).unwrap(),
            -std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // Confidently-correct adversary: loss approaches 0 from below.
        let l = generator_unpaired_loss(&[1e-9]).unwrap();
        assert!(l < 0.0 && l > -1e-6);
        // Fooling more lowers the loss.
        assert!(
            generator_unpaired_loss(&[0.9]).unwrap() < generator_unpaired_loss(&[0.1]).unwrap()
        );
        assert!(generator_unpaired_loss(&[]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::new(0.0, 0.0).unwrap();
        assert_eq!(asp_total_loss(1.23, 9.0, 9.0, &w).unwrap(), 1.23);
        let w = LossWeights::new(1.0, 2.0).unwrap();
        assert_relative_eq!(asp_total_loss(1.0, 2.0, 0.5, &w).unwrap(), 4.0);
        let w = LossWeights::new(0.0, 1.0).unwrap();
        assert_relative_eq!(asp_total_loss(0.0, 0.0, -0.7, &w).unwrap(), -0.7);
        assert!(asp_total_loss(f64::NAN, 0.0, 0.0, &w).is_err());
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn total_loss_is_linear_in_each_component() {
        let w = LossWeights::new(3.0, 0.25).unwrap();
        let base = asp_total_loss(1.0, 2.0, 4.0, &w).unwrap();
        assert_relative_eq!(asp_total_loss(2.0, 2.0, 4.0, &w).unwrap() - base, 1.0);
        assert_relative_eq!(asp_total_loss(1.0, 3.0, 4.0, &w).unwrap() - base, 3.0);
        assert_relative_eq!(asp_total_loss(1.0, 2.0, 8.0, &w).unwrap() - base, 1.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let h = 1e-5;
        let rel = 1e-4;

        // Paired loss.
        let p = arr2(&[[0.4, -0.3], [1.2, 0.7]]);
        let t = arr2(&[[0.0, 0.5], [1.0, -0.2]]);
        let grad = paired_loss_grad(&p, &t).unwrap();
        for idx in [(0usize, 0usize), (1, 1)] {
            let mut p2 = p.clone();
            p2[idx] += h;
            let up = paired_loss(&p2, &t).unwrap();
            p2[idx] -= 2.0 * h;
            let down = paired_loss(&p2, &t).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert_relative_eq!(fd, grad[idx], max_relative = rel);
        }

        // Generator unpaired loss.
        let fake = [0.3, 0.6, 0.85];
        let grad = generator_unpaired_loss_grad(&fake);
        for i in 0..fake.len() {
            let mut f2 = fake;
            f2[i] += h;
            let up = generator_unpaired_loss(&f2).unwrap();
            f2[i] -= 2.0 * h;
            let down = generator_unpaired_loss(&f2).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert_relative_eq!(fd, grad[i], max_relative = rel);
        }

        // Adversary loss wrt both score vectors (analytic forms inline).
        let real = [0.7, 0.4];
        let fake = [0.2, 0.55];
        for i in 0..2 {
            let mut r2 = real;
            r2[i] += h;
            let up = adversary_loss(&AdversaryScores::new(r2.to_vec(), fake.to_vec()).unwrap());
            r2[i] -= 2.0 * h;
            let down = adversary_loss(&AdversaryScores::new(r2.to_vec(), fake.to_vec()).unwrap());
            let fd = (up - down) / (2.0 * h);
            let analytic = -1.0 / (2.0 * 2.0 * real[i]);
            assert_relative_eq!(fd, analytic, max_relative = rel);

            let mut f2 = fake;
            f2[i] += h;
            let up = adversary_loss(&AdversaryScores::new(real.to_vec(), f2.to_vec()).unwrap());
            f2[i] -= 2.0 * h;
            let down = adversary_loss(&AdversaryScores::new(real.to_vec(), f2.to_vec()).unwrap());
            let fd = (up - down) / (2.0 * h);
            let analytic = 1.0 / (2.0 * 2.0 * (1.0 - fake[i]));
            assert_relative_eq!(fd, analytic, max_relative = rel);
        }
    }

    #[test]
    fn adversarial_step_contracts() {
        let mut rng = stream_rng(22, "adv-step");
        let mut adv = AdversaryNet::new(4, &[16], &mut rng);
        let mut opt = Adam::new(&adv.mlp, 1e-4);
        let u = Array2::from_elem((8, 4), 0.5);
        let outs = Array2::from_elem((8, 4), 0.5);
        let res = adversarial_step(&mut adv, &mut opt, &u, &outs, 1).unwrap();
        assert!(res.adversary_loss.is_finite());
        assert_eq!(res.model_output_grads.raw_dim(), outs.raw_dim());

        // Mismatched widths rejected.
        let bad = Array2::zeros((2, 3));
        assert!(adversarial_step(&mut adv, &mut opt, &u, &bad, 1).is_err());
        let empty = Array2::zeros((0, 4));
        assert!(adversarial_step(&mut adv, &mut opt, &u, &empty, 1).is_err());
        assert!(adversarial_step(&mut adv, &mut opt, &u, &outs, 0).is_err());
    }

    #[test]
    fn update_ratio_counts_adversary_steps() {
        let mut rng = stream_rng(23, "adv-ratio");
        let mut adv_a = AdversaryNet::new(2, &[8], &mut rng);
        let mut adv_b = adv_a.clone();
        let mut opt_a = Adam::new(&adv_a.mlp, 1e-3);
        let mut opt_b = Adam::new(&adv_b.mlp, 1e-3);
        let u = arr2(&[[1.0, 1.0], [0.9, 1.1]]);
        let outs = arr2(&[[-1.0, -1.0], [-0.9, -1.1]]);
        // Two single-step calls == one ratio-2 call, parameter for parameter.
        adversarial_step(&mut adv_a, &mut opt_a, &u, &outs, 1).unwrap();
        adversarial_step(&mut adv_a, &mut opt_a, &u, &outs, 1).unwrap();
        adversarial_step(&mut adv_b, &mut opt_b, &u, &outs, 2).unwrap();
        assert_eq!(adv_a, adv_b);
    }

    #[test]
    fn separable_batches_drive_discrimination() {
        let mut rng = stream_rng(24, "adv-sep");
        let mut adv = AdversaryNet::new(2, &[32], &mut rng);
        let mut opt = Adam::new(&adv.mlp, 1e-2);
        let u = Array2::from_shape_fn((16, 2), |_| 1.0 + rng.random_range(-0.05..0.05));
        let outs = Array2::from_shape_fn((16, 2), |_| -1.0 + rng.random_range(-0.05..0.05));
        let mut last = AdversarialStepResult {
            adversary_loss: f64::INFINITY,
            generator_loss: 0.0,
            model_output_grads: Array2::zeros((0, 0)),
            adversary_accuracy: 0.0,
        };
        for _ in 0..400 {
            last = adversarial_step(&mut adv, &mut opt, &u, &outs, 1).unwrap();
        }
        assert!(
            last.adversary_accuracy > 0.95,
            "accuracy {}",
            last.adversary_accuracy
        );
        // Fake scores near 0 => generator loss near its 0 upper bound.
        assert!(
            last.generator_loss > -0.1,
            "generator loss {}",
            last.generator_loss
        );
        assert!(last.adversary_loss < 0.1);
    }

    #[test]
    fn identical_distributions_leave_adversary_near_chance() {
        let mut rng = stream_rng(25, "adv-chance");
        let mut adv = AdversaryNet::new(2, &[32, 32], &mut rng);
        let mut opt = Adam::new(&adv.mlp, 1e-3);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0))
        };
        for _ in 0..300 {
            let u = draw(&mut rng, 32);
            let outs = draw(&mut rng, 32);
            adversarial_step(&mut adv, &mut opt, &u, &outs, 1).unwrap();
        }
        // Held-out batches from the same distribution: near-chance accuracy.
        let mut accs = Vec::new();
        for _ in 0..20 {
            let real = adv.forward_scores(&draw(&mut rng, 64)).unwrap();
            let fake = adv.forward_scores(&draw(&mut rng, 64)).unwrap();
            accs.push(AdversaryScores::new(real, fake).unwrap().accuracy());
        }
        let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!(mean_acc <= 0.6, "held-out accuracy {mean_acc}");
        // And its loss sits near ln 2.
        let real = adv.forward_scores(&draw(&mut rng, 64)).unwrap();
        let fake = adv.forward_scores(&draw(&mut rng, 64)).unwrap();
        let l = adversary_loss(&AdversaryScores::new(real, fake).unwrap());
        assert!((l - std::f64::consts::LN_2).abs() < 0.15, "loss {l}");
    }

    #[test]
    fn model_output_grads_match_finite_differences() {
        let mut rng = stream_rng(26, "adv-grad");
        let mut adv = AdversaryNet::new(3, &[16], &mut rng);
        let mut opt = Adam::new(&adv.mlp, 1e-4);
        let u = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let outs = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let res = adversarial_step(&mut adv, &mut opt, &u, &outs, 1).unwrap();
        // Gradient is through the *post-update* adversary.
        let h = 1e-5;
        for idx in [(0usize, 0usize), (2, 1), (3, 2)] {
            let mut o2 = outs.clone();
            o2[idx] += h;
            let up = generator_unpaired_loss(&adv.forward_scores(&o2).unwrap()).unwrap();
            o2[idx] -= 2.0 * h;
            let down = generator_unpaired_loss(&adv.forward_scores(&o2).unwrap()).unwrap();
            let fd = (up - down) / (2.0 * h);
            let an = res.model_output_grads[idx];
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-8),
                "idx {idx:?}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn dataset_validation() {
        let p = PairedDataset::new(Array2::zeros((3, 2)), Array2::zeros((3, 4)), "particle");
        assert_eq!(p.unwrap().len(), 3);
        assert!(PairedDataset::new(Array2::zeros((3, 2)), Array2::zeros((2, 4)), "x").is_err());
        let u = UnpairedDataset::new(Array2::zeros((5, 4)), "particle");
        assert_eq!(u.len(), 5);
        assert!(!u.is_empty());
    }
}
