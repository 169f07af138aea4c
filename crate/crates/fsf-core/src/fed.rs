//! Simulated synchronous federation: broadcast, local training on client
//! shards, FedAvg/FedProx aggregation, and round-by-round reporting.
//!
//! Everything is deterministic per seed: local epoch shuffles come from the
//! shared shuffle stream tagged `(client_id, round·E + e)` — the same
//! convention centralized training uses with client 0 — and DP noise comes
//! from a stream tagged `(client_id, round, batch)`. Clients may train
//! concurrently; per-batch and cross-client reductions always run in a fixed
//! order, so results do not depend on the execution mode.

use serde::{Deserialize, Serialize};

use crate::data::{shuffled_indices, ClientShard, SequenceSample};
use crate::exec::{map_indexed, Parallelism};
use crate::privacy::PrivacySpec;
use crate::rng::{derive_rng, Stream};
use crate::model::{LossKind, ModelConfig, ModelWeights};
use crate::train::{aggregate_metrics_weighted, batch_gradient, evaluate, Adam, Metrics, TrainError};

/// Aggregation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    FedAvg,
    /// FedAvg aggregation plus a local proximal penalty `μ·(θ − θ^t)` added
    /// to every gradient during client training.
    FedProx,
}

/// Federation hyper-parameters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub strategy: Strategy,
    /// Proximal weight (FedProx only).
    pub mu: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 20,
            rounds: 100,
            local_epochs: 1,
            strategy: Strategy::FedAvg,
            mu: 0.01,
            batch_size: 64,
            learning_rate: 3e-4,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.clients == 0 || self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(FedError::BadConfig(
                "clients, rounds, local epochs, and batch size must all be >= 1".into(),
            ));
        }
        if !(self.mu >= 0.0) {
            return Err(FedError::BadConfig("proximal mu must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FedError::BadConfig("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("invalid federation configuration: {0}")]
    BadConfig(String),
    #[error("client {0} has an empty training shard")]
    EmptyShard(usize),
    #[error("shard count {got} does not match configured client count {expected}")]
    ShardCountMismatch { expected: usize, got: usize },
    #[error("update {index} has a different tensor layout than update 0")]
    ShapeMismatch { index: usize },
    #[error("update {index} has non-positive sample count")]
    BadSampleCount { index: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Outcome of one federated round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    /// Aggregated global weights after this round.
    pub weights: ModelWeights,
    /// Sample-count-weighted mean of the per-client metrics.
    pub aggregate: Metrics,
    pub per_client: Vec<Metrics>,
}

/// Local training on one shard starting from the broadcast weights.
///
/// Runs `local_epochs` of weighted-cross-entropy minibatch Adam (a fresh
/// optimizer per round, as each round re-initializes from the broadcast).
/// Under FedProx the proximal gradient `μ·(θ − θ^t)` joins each batch
/// gradient before the optimizer step; under DP each batch uses the clipped,
/// noised gradient instead of the plain mean. Returns the trained weights
/// and metrics on the shard's local test partition.
pub fn local_train(
    shard: &ClientShard,
    global: &ModelWeights,
    config: &FederationConfig,
    seed: u64,
    round: u64,
    privacy: Option<&PrivacySpec>,
    mode: Parallelism,
) -> Result<(ModelWeights, Metrics), FedError> {
    config.validate()?;
    if shard.train.is_empty() {
        return Err(FedError::EmptyShard(shard.client_id));
    }
    let mut weights = global.clone();
    let mut opt = Adam::new(&weights, config.learning_rate);
    let mut batch_counter = 0u64;
    for epoch in 0..config.local_epochs {
        let global_epoch = round * config.local_epochs as u64 + epoch as u64;
        let mut rng = derive_rng(seed, Stream::Shuffle, &[shard.client_id as u64, global_epoch]);
        let order = shuffled_indices(shard.train.len(), &mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &shard.train[i]).collect();
            let mut grads = match privacy {
                Some(spec) => {
                    let mut noise_rng =
                        derive_rng(seed, Stream::DpNoise, &[shard.client_id as u64, round, batch_counter]);
                    dp_batch_gradient(
                        &weights,
                        &batch,
                        &shard.class_weights,
                        spec,
                        &mut noise_rng,
                        mode,
                    )?
                }
                None => {
                    batch_gradient(
                        &weights,
                        &batch,
                        LossKind::WeightedCe,
                        &shard.class_weights,
                        mode,
                    )?
                    .1
                }
            };
            if config.strategy == Strategy::FedProx && config.mu != 0.0 {
                add_proximal(&mut grads, &weights, global, config.mu);
            }
            opt.step(&mut weights, &grads);
            batch_counter += 1;
        }
    }
    let metrics = evaluate(&weights, &shard.test, mode)?;
    Ok((weights, metrics))
}

/// Clipped, noised mean gradient for one batch (DP-SGD), without the
/// optimizer step.
fn dp_batch_gradient(
    weights: &ModelWeights,
    batch: &[&SequenceSample],
    class_weights: &[f64],
    spec: &PrivacySpec,
    rng: &mut impl rand::Rng,
    mode: Parallelism,
) -> Result<ModelWeights, FedError> {
    use crate::model::loss_and_gradients;
    use crate::privacy::{clip_per_sample, noisy_batch_gradient};
    if batch.is_empty() {
        return Err(TrainError::NoData.into());
    }
    let per_sample = map_indexed(mode, batch.len(), |i| {
        let s = batch[i];
        let cw = class_weights.get(s.label as usize).copied().unwrap_or(1.0);
        loss_and_gradients(weights, &s.values, LossKind::WeightedCe, s.label as usize, cw)
    });
    let mut grads = Vec::with_capacity(batch.len());
    for r in per_sample {
        grads.push(r.map_err(TrainError::from)?.1);
    }
    clip_per_sample(&mut grads, spec.clip_norm);
    Ok(noisy_batch_gradient(&grads, spec.noise_multiplier, spec.clip_norm, rng)?)
}

/// Adds `μ·(θ − θ^t)` to every gradient tensor.
fn add_proximal(grads: &mut ModelWeights, theta: &ModelWeights, anchor: &ModelWeights, mu: f64) {
    for ((g, t), a) in grads.flat_mut().into_iter().zip(theta.flat()).zip(anchor.flat()) {
        for ((gi, ti), ai) in g.iter_mut().zip(t).zip(a) {
            *gi += mu * (ti - ai);
        }
    }
}

/// Sample-count-weighted mean of client weights: `Σ (n_i/N)·θ_i`, tensor by
/// tensor in list order. A single update is returned exactly.
pub fn fedavg_aggregate(updates: &[(usize, &ModelWeights)]) -> Result<ModelWeights, FedError> {
    let (first_n, first) = *updates.first().ok_or_else(|| {
        FedError::BadConfig("aggregation requires at least one update".into())
    })?;
    if first_n == 0 {
        return Err(FedError::BadSampleCount { index: 0 });
    }
    for (i, (n, w)) in updates.iter().enumerate().skip(1) {
        if *n == 0 {
            return Err(FedError::BadSampleCount { index: i });
        }
        if w.shapes() != first.shapes() {
            return Err(FedError::ShapeMismatch { index: i });
        }
    }
    if updates.len() == 1 {
        return Ok(first.clone());
    }
    let total: f64 = updates.iter().map(|(n, _)| *n as f64).sum();
    let mut acc = ModelWeights::zeros(&first.config);
    for (n, w) in updates {
        acc.add_scaled(w, *n as f64 / total);
    }
    Ok(acc)
}

/// Eq.-style weighted mean of client metrics with explicit sample counts.
pub fn aggregate_metrics(reports: &[(usize, Metrics)]) -> Option<Metrics> {
    let weighted: Vec<(f64, &Metrics)> = reports.iter().map(|(n, m)| (*n as f64, m)).collect();
    aggregate_metrics_weighted(&weighted)
}

/// Runs the full broadcast → local-train → aggregate loop, invoking
/// `on_round` after every aggregation. Returns the final global weights.
pub fn run_federation_with(
    shards: &[ClientShard],
    model_config: &ModelConfig,
    config: &FederationConfig,
    seed: u64,
    privacy: Option<&PrivacySpec>,
    mode: Parallelism,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<ModelWeights, FedError> {
    config.validate()?;
    if shards.len() != config.clients {
        return Err(FedError::ShardCountMismatch { expected: config.clients, got: shards.len() });
    }
    let mut global = ModelWeights::init(model_config, seed);
    for round in 0..config.rounds {
        let results = map_indexed(mode, shards.len(), |i| {
            local_train(&shards[i], &global, config, seed, round as u64, privacy, mode)
        });
        let mut updates = Vec::with_capacity(shards.len());
        let mut per_client = Vec::with_capacity(shards.len());
        for (shard, r) in shards.iter().zip(results) {
            let (weights, metrics) = r?;
            updates.push((shard.train.len(), weights));
            per_client.push(metrics);
        }
        let borrowed: Vec<(usize, &ModelWeights)> =
            updates.iter().map(|(n, w)| (*n, w)).collect();
        global = fedavg_aggregate(&borrowed)?;
        let weighted: Vec<(usize, Metrics)> = shards
            .iter()
            .zip(per_client.iter())
            .map(|(s, m)| (s.train.len(), m.clone()))
            .collect();
        let aggregate = aggregate_metrics(&weighted)
            .expect("at least one client with a nonempty shard");
        on_round(&RoundReport { round, weights: global.clone(), aggregate: aggregate.clone(), per_client: per_client.clone() });
    }
    Ok(global)
}

/// As [`run_federation_with`], collecting every round report.
pub fn run_federation(
    shards: &[ClientShard],
    model_config: &ModelConfig,
    config: &FederationConfig,
    seed: u64,
    privacy: Option<&PrivacySpec>,
    mode: Parallelism,
) -> Result<Vec<RoundReport>, FedError> {
    let mut reports = Vec::with_capacity(config.rounds);
    run_federation_with(shards, model_config, config, seed, privacy, mode, |r| {
        reports.push(r.clone());
    })?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::{derive_rng, Stream};
    use ndarray::Array2;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig::tiny()
    }

    fn toy_shard(cfg: &ModelConfig, client_id: usize, n_train: usize, n_test: usize, seed: u64) -> ClientShard {
        let mut rng = derive_rng(seed, Stream::Test, &[90, client_id as u64]);
        let mut mk = |n: usize| -> Vec<SequenceSample> {
            (0..n)
                .map(|i| {
                    let label = (i % 2) as u8;
                    let base = if label == 0 { -1.0 } else { 1.0 };
                    SequenceSample {
                        values: Array2::from_shape_fn((cfg.timesteps, cfg.features), |_| {
                            base + rng.gen_range(-0.3..0.3)
                        }),
                        label,
                    }
                })
                .collect()
        };
        let train = mk(n_train);
        let test = mk(n_test);
        ClientShard { client_id, train, test, class_weights: [1.0; crate::data::NUM_CLASSES] }
    }

    fn weights_equal_bitwise(a: &ModelWeights, b: &ModelWeights) -> bool {
        a.flat()
            .iter()
            .zip(b.flat().iter())
            .all(|(x, y)| x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits()))
    }

    #[test]
    fn aggregation_examples() {
        let cfg = tiny_cfg();
        let mut w0 = ModelWeights::zeros(&cfg);
        let mut w4 = ModelWeights::zeros(&cfg);
        for t in w0.flat_mut() {
            t.fill(0.0);
        }
        for t in w4.flat_mut() {
            t.fill(4.0);
        }
        // n=(1,3), values (0,4) -> 3.0 everywhere.
        let agg = fedavg_aggregate(&[(1, &w0), (3, &w4)]).unwrap();
        assert!(agg.flat().iter().all(|t| t.iter().all(|&x| (x - 3.0).abs() < 1e-12)));
        // n=(2,2), values (1,3) -> 2.0 everywhere.
        let mut w1 = ModelWeights::zeros(&cfg);
        let mut w3 = ModelWeights::zeros(&cfg);
        for t in w1.flat_mut() {
            t.fill(1.0);
        }
        for t in w3.flat_mut() {
            t.fill(3.0);
        }
        let agg = fedavg_aggregate(&[(2, &w1), (2, &w3)]).unwrap();
        assert!(agg.flat().iter().all(|t| t.iter().all(|&x| (x - 2.0).abs() < 1e-12)));
    }

    #[test]
    fn single_update_is_identity() {
        let w = ModelWeights::init(&tiny_cfg(), 3);
        let agg = fedavg_aggregate(&[(17, &w)]).unwrap();
        assert!(weights_equal_bitwise(&w, &agg));
    }

    #[test]
    fn aggregation_matches_brute_force_oracle() {
        // Independent accumulation (sum of n_i·w_i, divided once at the end)
        // over randomized weights and counts.
        let cfg = tiny_cfg();
        let mut rng = derive_rng(4, Stream::Test, &[91]);
        for _ in 0..25 {
            let k = rng.gen_range(1..=3usize);
            let updates: Vec<(usize, ModelWeights)> = (0..k)
                .map(|i| (rng.gen_range(1..50usize), ModelWeights::init(&cfg, 100 + i as u64)))
                .collect();
            let borrowed: Vec<(usize, &ModelWeights)> =
                updates.iter().map(|(n, w)| (*n, w)).collect();
            let agg = fedavg_aggregate(&borrowed).unwrap();
            let total: f64 = updates.iter().map(|(n, _)| *n as f64).sum();
            for (t_idx, tensor) in agg.flat().iter().enumerate() {
                for (e_idx, &got) in tensor.iter().enumerate() {
                    let mut expect = 0.0;
                    for (n, w) in &updates {
                        expect += *n as f64 * w.flat()[t_idx][e_idx];
                    }
                    expect /= total;
                    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn aggregation_is_linear_and_fixed_on_identical_updates() {
        let cfg = tiny_cfg();
        let w = ModelWeights::init(&cfg, 8);
        let agg = fedavg_aggregate(&[(3, &w), (5, &w), (2, &w)]).unwrap();
        for (a, b) in agg.flat().iter().zip(w.flat().iter()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        // Scaling every update scales the aggregate.
        let mut w2 = w.clone();
        w2.scale(2.0);
        let base = fedavg_aggregate(&[(1, &w), (2, &w2)]).unwrap();
        let mut wa = w.clone();
        wa.scale(3.0);
        let mut wb = w2.clone();
        wb.scale(3.0);
        let scaled = fedavg_aggregate(&[(1, &wa), (2, &wb)]).unwrap();
        for (a, b) in scaled.flat().iter().zip(base.flat().iter()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - 3.0 * v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn aggregation_rejects_bad_updates() {
        let cfg = tiny_cfg();
        let w = ModelWeights::init(&cfg, 1);
        assert!(matches!(fedavg_aggregate(&[]), Err(FedError::BadConfig(_))));
        assert!(matches!(
            fedavg_aggregate(&[(0, &w)]),
            Err(FedError::BadSampleCount { index: 0 })
        ));
        let other = ModelWeights::init(
            &ModelConfig { d_model: 16, ..ModelConfig::tiny() },
            1,
        );
        assert!(matches!(
            fedavg_aggregate(&[(1, &w), (1, &other)]),
            Err(FedError::ShapeMismatch { index: 1 })
        ));
    }

    #[test]
    fn metric_aggregation_examples() {
        use crate::train::metrics_from_confusion;
        let a = metrics_from_confusion(vec![vec![8.0, 2.0], vec![0.0, 0.0]]); // acc 0.8
        let b = metrics_from_confusion(vec![vec![6.0, 4.0], vec![0.0, 0.0]]); // acc 0.6
        let agg = aggregate_metrics(&[(1, a.clone()), (1, b.clone())]).unwrap();
        assert!((agg.accuracy - 0.7).abs() < 1e-12);
        let c = metrics_from_confusion(vec![vec![4.0, 6.0], vec![0.0, 0.0]]); // acc 0.4
        let agg = aggregate_metrics(&[(3, a.clone()), (1, c)]).unwrap();
        assert!((agg.accuracy - 0.7).abs() < 1e-12);
        // Identical metrics aggregate to themselves.
        let same = aggregate_metrics(&[(2, a.clone()), (5, a.clone())]).unwrap();
        assert!((same.accuracy - a.accuracy).abs() < 1e-12);
        assert!((same.macro_f1 - a.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn fedprox_zero_mu_matches_fedavg_bitwise() {
        let cfg = tiny_cfg();
        let shard = toy_shard(&cfg, 0, 12, 6, 20);
        let global = ModelWeights::init(&cfg, 21);
        let avg_cfg = FederationConfig {
            clients: 1, rounds: 1, local_epochs: 2, strategy: Strategy::FedAvg,
            mu: 0.0, batch_size: 4, learning_rate: 1e-3,
        };
        let prox_cfg = FederationConfig { strategy: Strategy::FedProx, ..avg_cfg };
        let (w_avg, _) = local_train(&shard, &global, &avg_cfg, 7, 0, None, Parallelism::Sequential).unwrap();
        let (w_prox, _) = local_train(&shard, &global, &prox_cfg, 7, 0, None, Parallelism::Sequential).unwrap();
        assert!(weights_equal_bitwise(&w_avg, &w_prox));
    }

    #[test]
    fn huge_mu_pins_weights_to_the_anchor() {
        // The proximal pull is zero at the anchor itself, so the first
        // optimizer step matches the unpenalized run; from the second step on
        // a huge mu drags the weights back toward the broadcast. Use several
        // batches so the penalty has steps to act on.
        let cfg = tiny_cfg();
        let shard = toy_shard(&cfg, 0, 24, 4, 22);
        let global = ModelWeights::init(&cfg, 23);
        let base = FederationConfig {
            clients: 1, rounds: 1, local_epochs: 3, strategy: Strategy::FedProx,
            mu: 0.0, batch_size: 4, learning_rate: 1e-3,
        };
        let strong = FederationConfig { mu: 1e6, ..base };
        let (w_free, _) = local_train(&shard, &global, &base, 9, 0, None, Parallelism::Sequential).unwrap();
        let (w_pinned, _) = local_train(&shard, &global, &strong, 9, 0, None, Parallelism::Sequential).unwrap();
        let mut diff_free = w_free.clone();
        diff_free.add_scaled(&global, -1.0);
        let mut diff_pinned = w_pinned.clone();
        diff_pinned.add_scaled(&global, -1.0);
        assert!(
            diff_pinned.squared_norm() < diff_free.squared_norm(),
            "{} !< {}",
            diff_pinned.squared_norm(),
            diff_free.squared_norm()
        );
    }

    #[test]
    fn empty_shard_and_zero_epochs_are_rejected() {
        let cfg = tiny_cfg();
        let mut shard = toy_shard(&cfg, 0, 4, 2, 24);
        let global = ModelWeights::init(&cfg, 1);
        let config = FederationConfig { clients: 1, rounds: 1, ..FederationConfig::default() };
        let zero_epochs = FederationConfig { local_epochs: 0, ..config };
        assert!(matches!(
            local_train(&shard, &global, &zero_epochs, 1, 0, None, Parallelism::Sequential),
            Err(FedError::BadConfig(_))
        ));
        shard.train.clear();
        assert!(matches!(
            local_train(&shard, &global, &config, 1, 0, None, Parallelism::Sequential),
            Err(FedError::EmptyShard(0))
        ));
    }

    #[test]
    fn single_client_round_equals_one_centralized_epoch_bitwise() {
        use crate::train::{train_centralized, TrainConfig};
        let cfg = tiny_cfg();
        let shard = toy_shard(&cfg, 0, 20, 8, 25);
        let seed = 31u64;
        let fed_cfg = FederationConfig {
            clients: 1, rounds: 1, local_epochs: 1, strategy: Strategy::FedAvg,
            mu: 0.0, batch_size: 8, learning_rate: 1e-3,
        };
        let fed_final = run_federation_with(
            std::slice::from_ref(&shard), &cfg, &fed_cfg, seed, None,
            Parallelism::Sequential, |_| {},
        )
        .unwrap();

        let mut central = ModelWeights::init(&cfg, seed);
        let train_cfg = TrainConfig {
            epochs: 1, batch_size: 8, learning_rate: 1e-3,
            loss: LossKind::WeightedCe, seed,
        };
        train_centralized(
            &mut central, &shard.train, &[], &shard.class_weights, &train_cfg,
            Parallelism::Sequential,
        )
        .unwrap();
        assert!(weights_equal_bitwise(&fed_final, &central));
    }

    #[test]
    fn federation_produces_one_report_per_round_and_is_order_insensitive() {
        let cfg = tiny_cfg();
        let shards: Vec<ClientShard> =
            (0..3).map(|c| toy_shard(&cfg, c, 10 + 2 * c, 4, 40 + c as u64)).collect();
        let fed_cfg = FederationConfig {
            clients: 3, rounds: 2, local_epochs: 1, strategy: Strategy::FedAvg,
            mu: 0.0, batch_size: 5, learning_rate: 1e-3,
        };
        let reports = run_federation(&shards, &cfg, &fed_cfg, 5, None, Parallelism::Sequential).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].per_client.len(), 3);
        assert_eq!(reports[1].round, 1);

        // Permuting the client list moves no aggregated tensor by more than
        // numerical noise (local training only depends on the shard's own id).
        let mut permuted = shards.clone();
        permuted.rotate_left(1);
        let reports_p = run_federation(&permuted, &cfg, &fed_cfg, 5, None, Parallelism::Sequential).unwrap();
        for (a, b) in reports.last().unwrap().weights.flat().iter()
            .zip(reports_p.last().unwrap().weights.flat().iter())
        {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_aggregate_matches_weighted_mean_of_client_metrics() {
        let cfg = tiny_cfg();
        let shards: Vec<ClientShard> =
            (0..2).map(|c| toy_shard(&cfg, c, 8 + 4 * c, 6, 60 + c as u64)).collect();
        let fed_cfg = FederationConfig {
            clients: 2, rounds: 1, local_epochs: 1, strategy: Strategy::FedAvg,
            mu: 0.0, batch_size: 4, learning_rate: 1e-3,
        };
        let reports = run_federation(&shards, &cfg, &fed_cfg, 6, None, Parallelism::Sequential).unwrap();
        let r = &reports[0];
        let expect = aggregate_metrics(&[
            (shards[0].train.len(), r.per_client[0].clone()),
            (shards[1].train.len(), r.per_client[1].clone()),
        ])
        .unwrap();
        assert!((r.aggregate.accuracy - expect.accuracy).abs() < 1e-9);
        assert!((r.aggregate.macro_f1 - expect.macro_f1).abs() < 1e-9);
    }

    #[test]
    fn dp_noise_changes_training_and_zero_noise_does_not() {
        let cfg = tiny_cfg();
        let shard = toy_shard(&cfg, 0, 8, 4, 70);
        let global = ModelWeights::init(&cfg, 2);
        let fed_cfg = FederationConfig {
            clients: 1, rounds: 1, local_epochs: 1, strategy: Strategy::FedAvg,
            mu: 0.0, batch_size: 4, learning_rate: 1e-3,
        };
        let plain = local_train(&shard, &global, &fed_cfg, 3, 0, None, Parallelism::Sequential).unwrap().0;
        let quiet_spec = PrivacySpec {
            noise_multiplier: 0.0, clip_norm: f64::INFINITY, ..PrivacySpec::default()
        };
        let quiet = local_train(&shard, &global, &fed_cfg, 3, 0, Some(&quiet_spec), Parallelism::Sequential)
            .unwrap()
            .0;
        assert!(weights_equal_bitwise(&plain, &quiet));
        let noisy_spec = PrivacySpec { noise_multiplier: 0.5, clip_norm: 1.0, ..PrivacySpec::default() };
        let noisy = local_train(&shard, &global, &fed_cfg, 3, 0, Some(&noisy_spec), Parallelism::Sequential)
            .unwrap()
            .0;
        assert!(!weights_equal_bitwise(&plain, &noisy));
        // And the DP path is reproducible under the same seed.
        let noisy2 = local_train(&shard, &global, &fed_cfg, 3, 0, Some(&noisy_spec), Parallelism::Sequential)
            .unwrap()
            .0;
        assert!(weights_equal_bitwise(&noisy, &noisy2));
    }
}
