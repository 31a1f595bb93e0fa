//! Backpropagation of the mean pair loss and full-batch iRprop− training.

use super::{pair_loss, pair_probability, NetworkConfig, RankModel, RpropConfig};
use crate::error::{Error, Result};
use crate::relarm::FeatureSet;
use crate::target::{validate, TargetMatrix};

/// Training pairs `(i, j, t_ij)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize, f64)>,
}

impl PairBatch {
    /// Every `i < j` pair of the target matrix.
    pub fn from_targets(targets: &TargetMatrix) -> Self {
        let m = targets.len();
        let pairs = (0..m)
            .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, targets.get(i, j)))
            .collect();
        PairBatch { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check(&self, n_entities: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("pair batch is empty"));
        }
        for &(i, j, t) in &self.pairs {
            if i >= j || j >= n_entities {
                return Err(Error::invalid(format!("pair ({i}, {j}) is not an i < j pair of known entities")));
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("target {t} for pair ({i}, {j}) is not a probability")));
            }
        }
        Ok(())
    }
}

fn entity_scores(m: &RankModel, features: &FeatureSet) -> Vec<f64> {
    features
        .vectors()
        .iter()
        .map(|a| m.forward(a).last().unwrap()[0])
        .collect()
}

/// Mean cross entropy over the batch.
pub fn mean_loss(m: &RankModel, batch: &PairBatch, features: &FeatureSet) -> Result<f64> {
    batch.check(features.len())?;
    check_dims(m, features)?;
    let s = entity_scores(m, features);
    Ok(loss_from_scores(&s, batch))
}

fn loss_from_scores(s: &[f64], batch: &PairBatch) -> f64 {
    let total: f64 = batch
        .pairs
        .iter()
        .map(|&(i, j, t)| pair_loss(t, pair_probability(s[i], s[j])))
        .sum();
    total / batch.len() as f64
}

fn check_dims(m: &RankModel, features: &FeatureSet) -> Result<()> {
    if features.dim() != m.input_dim() {
        return Err(Error::invalid(format!(
            "features have dimension {}, model expects {}",
            features.dim(),
            m.input_dim()
        )));
    }
    Ok(())
}

/// Exact gradient of the mean pair loss, shaped like the model.
///
/// The loss depends on parameters only through entity scores, and
/// ∂CE/∂(rank_i − rank_j) = P_ij − t_ij, so each pair adds `+(P − t)/n` to the
/// score sensitivity of `i` and `−(P − t)/n` to that of `j`. Each entity is then
/// backpropagated once with its accumulated sensitivity; the shared parameters
/// collect both branches' contributions.
pub fn gradients(m: &RankModel, batch: &PairBatch, features: &FeatureSet) -> Result<RankModel> {
    batch.check(features.len())?;
    check_dims(m, features)?;
    Ok(gradients_unchecked(m, batch, features).0)
}

fn gradients_unchecked(m: &RankModel, batch: &PairBatch, features: &FeatureSet) -> (RankModel, f64) {
    let acts: Vec<Vec<Vec<f64>>> = features.vectors().iter().map(|a| m.forward(a)).collect();
    let scores: Vec<f64> = acts.iter().map(|a| a.last().unwrap()[0]).collect();
    let n = batch.len() as f64;
    let mut sensitivity = vec![0.0; scores.len()];
    let mut loss = 0.0;
    for &(i, j, t) in &batch.pairs {
        let p = pair_probability(scores[i], scores[j]);
        loss += pair_loss(t, p);
        let g = (p - t) / n;
        sensitivity[i] += g;
        sensitivity[j] -= g;
    }

    let mut grad = m.zeros_like();
    let last = m.layers.len() - 1;
    for (e, act) in acts.iter().enumerate() {
        if sensitivity[e] == 0.0 {
            continue;
        }
        // delta = ∂loss/∂(pre-activation) of the current layer
        let mut delta = vec![sensitivity[e]];
        for l in (0..=last).rev() {
            let layer = &m.layers[l];
            let input = &act[l];
            let g = &mut grad.layers[l];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if l == 0 {
                break;
            }
            // input of layer l is the log-sigmoid output of layer l-1
            delta = (0..layer.inputs)
                .map(|k| {
                    let back: f64 = delta.iter().enumerate().map(|(o, d)| d * layer.weight(o, k)).sum();
                    back * input[k] * (1.0 - input[k])
                })
                .collect();
        }
    }
    (grad, loss / n)
}

/// Per-parameter step sizes and previous gradients for iRprop−.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub config: RpropConfig,
    pub steps: Vec<f64>,
    pub previous: Vec<f64>,
}

impl RpropState {
    pub fn new(model: &RankModel, config: RpropConfig) -> Self {
        let n = model.parameter_count();
        RpropState {
            steps: vec![config.delta_init; n],
            previous: vec![0.0; n],
            config,
        }
    }

    /// One iRprop− update: grow the step while the gradient sign holds, shrink it
    /// and skip the update on a sign flip.
    pub fn step(&mut self, model: &mut RankModel, grad: &RankModel) {
        let c = &self.config;
        let g = grad.parameters();
        for (k, w) in model.parameters_mut().enumerate() {
            let prod = g[k] * self.previous[k];
            if prod > 0.0 {
                self.steps[k] = (self.steps[k] * c.eta_plus).min(c.delta_max);
            } else if prod < 0.0 {
                self.steps[k] = (self.steps[k] * c.eta_minus).max(c.delta_min);
                self.previous[k] = 0.0;
                continue;
            }
            if g[k] > 0.0 {
                *w -= self.steps[k];
            } else if g[k] < 0.0 {
                *w += self.steps[k];
            }
            self.previous[k] = g[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: RankModel,
    /// Mean pair loss before the first update and after every update.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history is never empty")
    }
}

/// Full-batch iRprop− over all `i < j` pairs of `targets`.
pub fn train(
    model: &RankModel,
    features: &FeatureSet,
    targets: &TargetMatrix,
    cfg: &NetworkConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let violations = validate(targets);
    if !violations.is_empty() {
        return Err(Error::invalid(format!(
            "target matrix has {} violations, first: {}",
            violations.len(),
            violations[0]
        )));
    }
    if targets.entity_ids != features.entity_ids() {
        return Err(Error::invalid("feature and target entity ids are not aligned"));
    }
    check_dims(model, features)?;
    let batch = PairBatch::from_targets(targets);
    batch.check(features.len())?;

    let mut model = model.clone();
    let mut rprop = RpropState::new(&model, cfg.rprop.clone());
    let (mut grad, mut loss) = gradients_unchecked(&model, &batch, features);
    let mut history = vec![loss];
    for _ in 0..cfg.epochs {
        rprop.step(&mut model, &grad);
        let (g, l) = gradients_unchecked(&model, &batch, features);
        history.push(l);
        let change = (loss - l).abs();
        grad = g;
        loss = l;
        if change < cfg.loss_tolerance {
            break;
        }
    }
    if model.parameters().iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("training produced non-finite parameters".into()));
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranknet::{init_model, score_all, Layer};
    use crate::target::TargetMode;

    fn features(vals: &[&[f64]]) -> FeatureSet {
        FeatureSet::new(
            (0..vals.len()).map(|i| format!("e{i:02}")).collect(),
            vals.iter().map(|v| v.to_vec()).collect(),
        )
        .unwrap()
    }

    fn order_targets(m: usize) -> TargetMatrix {
        // higher index = better
        let ids = (0..m).map(|i| format!("e{i:02}")).collect();
        let t = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 0.5 } else if i > j { 1.0 } else { 0.0 }).collect())
            .collect();
        TargetMatrix { entity_ids: ids, mode: TargetMode::Static, t }
    }

    #[test]
    fn linear_network_gradient_by_hand() {
        // no hidden layers: rank = w·a + b, dCE/dw = (P - t)(a_i - a_j)
        let m = RankModel {
            layers: vec![Layer { inputs: 2, outputs: 1, weights: vec![0.4, -0.3], bias: vec![0.2] }],
        };
        let f = features(&[&[1.0, 0.5], &[0.2, 0.9]]);
        let batch = PairBatch { pairs: vec![(0, 1, 1.0)] };
        let g = gradients(&m, &batch, &f).unwrap();
        let s0 = 0.4 * 1.0 - 0.3 * 0.5 + 0.2;
        let s1 = 0.4 * 0.2 - 0.3 * 0.9 + 0.2;
        let p = 1.0 / (1.0 + f64::exp(s1 - s0));
        assert!((g.layers[0].weights[0] - (p - 1.0) * 0.8).abs() < 1e-15);
        assert!((g.layers[0].weights[1] - (p - 1.0) * -0.4).abs() < 1e-15);
        assert!(g.layers[0].bias[0].abs() < 1e-15);
    }

    #[test]
    fn stationary_when_predictions_match_targets() {
        let mut cfg = NetworkConfig::new(2);
        cfg.seed = 5;
        let m = init_model(&cfg).unwrap();
        let f = features(&[&[0.1, 0.2], &[0.8, 0.3], &[0.5, 0.9]]);
        let s = score_all(&m, &f).unwrap();
        let pairs = vec![
            (0, 1, pair_probability(s[0], s[1])),
            (0, 2, pair_probability(s[0], s[2])),
            (1, 2, pair_probability(s[1], s[2])),
        ];
        let g = gradients(&m, &PairBatch { pairs }, &f).unwrap();
        assert!(g.parameters().iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn finite_differences_small_network() {
        let mut cfg = NetworkConfig::new(3);
        cfg.hidden = vec![4, 3];
        cfg.seed = 17;
        let mut m = init_model(&cfg).unwrap();
        m.parameters_mut().enumerate().for_each(|(k, p)| *p += 0.05 * (k as f64).sin());
        let f = features(&[&[0.1, 0.2, 0.3], &[0.8, 0.3, 0.1], &[0.5, 0.9, 0.4], &[0.0, 1.0, 0.7]]);
        let batch = PairBatch {
            pairs: vec![(0, 1, 0.65), (0, 2, 0.0), (1, 3, 1.0), (2, 3, 0.45)],
        };
        let g = gradients(&m, &batch, &f).unwrap().parameters();
        let base = m.parameters();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let mut mp = m.clone();
            mp.set_parameters(&plus);
            let mut mm = m.clone();
            mm.set_parameters(&minus);
            let fd = (mean_loss(&mp, &batch, &f).unwrap() - mean_loss(&mm, &batch, &f).unwrap()) / (2.0 * h);
            if g[k].abs() > 1e-8 {
                assert!(((g[k] - fd) / g[k]).abs() < 1e-4, "param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn uninformative_targets_stay_at_ln2() {
        let cfg = NetworkConfig::new(1);
        let m = init_model(&cfg).unwrap().zeros_like();
        let f = features(&[&[0.1], &[0.5], &[0.9]]);
        let mut t = order_targets(3);
        t.mode = TargetMode::Dynamic;
        for i in 0..3 {
            for j in 0..3 {
                t.t[i][j] = 0.5;
            }
        }
        let out = train(&m, &f, &t, &cfg).unwrap();
        for l in &out.loss_history {
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
        let g = gradients(&m, &PairBatch::from_targets(&t), &f).unwrap();
        assert!(g.parameters().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn separable_order_is_learned() {
        let m_count = 30;
        let vals: Vec<Vec<f64>> = (0..m_count).map(|i| vec![i as f64 / m_count as f64]).collect();
        let f = FeatureSet::new((0..m_count).map(|i| format!("e{i:02}")).collect(), vals).unwrap();
        let t = order_targets(m_count);
        let mut cfg = NetworkConfig::new(1);
        cfg.seed = 3;
        let out = train(&init_model(&cfg).unwrap(), &f, &t, &cfg).unwrap();
        assert!(out.final_loss() < 0.05, "final loss {}", out.final_loss());
        assert!(out.final_loss() < out.loss_history[0]);
        let s = score_all(&out.model, &f).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]), "{s:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let f = features(&[&[0.1, 0.2], &[0.8, 0.3], &[0.5, 0.9], &[0.3, 0.3]]);
        let t = order_targets(4);
        let mut cfg = NetworkConfig::new(2);
        cfg.epochs = 50;
        let a = train(&init_model(&cfg).unwrap(), &f, &t, &cfg).unwrap();
        let b = train(&init_model(&cfg).unwrap(), &f, &t, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.loss_history.len() <= 51);
    }

    #[test]
    fn rejects_invalid_targets_and_misaligned_ids() {
        let f = features(&[&[0.1], &[0.5]]);
        let cfg = NetworkConfig::new(1);
        let m = init_model(&cfg).unwrap();
        let mut t = order_targets(2);
        t.t[0][1] = 0.7;
        assert!(matches!(train(&m, &f, &t, &cfg), Err(Error::InvalidInput(_))));
        let mut t = order_targets(2);
        t.entity_ids.reverse();
        assert!(train(&m, &f, &t, &cfg).is_err());
        assert!(gradients(&m, &PairBatch { pairs: vec![] }, &f).is_err());
    }

    #[test]
    fn rprop_sign_flip_skips_update() {
        let mut m = RankModel {
            layers: vec![Layer { inputs: 1, outputs: 1, weights: vec![0.0], bias: vec![0.0] }],
        };
        let mut st = RpropState::new(&m, RpropConfig::default());
        let grad = |w: f64, b: f64| RankModel {
            layers: vec![Layer { inputs: 1, outputs: 1, weights: vec![w], bias: vec![b] }],
        };
        st.step(&mut m, &grad(1.0, -1.0));
        assert_eq!(m.parameters(), vec![-0.1, 0.1]);
        st.step(&mut m, &grad(1.0, -1.0));
        assert!((m.parameters()[0] - (-0.1 - 0.12)).abs() < 1e-15);
        // flip on the weight: step shrinks, weight unchanged
        let before = m.parameters()[0];
        st.step(&mut m, &grad(-1.0, -1.0));
        assert_eq!(m.parameters()[0], before);
        assert!((st.steps[0] - 0.06).abs() < 1e-15);
        assert_eq!(st.previous[0], 0.0);
        // next step moves with the shrunken size
        st.step(&mut m, &grad(-1.0, -1.0));
        assert!((m.parameters()[0] - (before + 0.06)).abs() < 1e-15);
    }
}
