//! Matrix-factorization base recommender trained on implicit feedback.
//!
//! Pointwise squared loss over observed pairs (target 1) and uniformly sampled
//! unobserved pairs (target 0), optimized by plain SGD. Any observed
//! interaction counts as a positive regardless of its original value.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{InteractionStore, ItemId, UserId};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum MfError {
    #[error("training store has no interactions")]
    EmptyStore,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
    #[error("index out of range: user {user}, item {item}")]
    OutOfRange { user: UserId, item: ItemId },
    #[error("model shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfHyperparams {
    pub factors: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    /// Standard deviation of the Gaussian factor initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for MfHyperparams {
    fn default() -> Self {
        MfHyperparams {
            factors: 32,
            learning_rate: 0.05,
            regularization: 0.01,
            epochs: 20,
            negatives_per_positive: 3,
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl MfHyperparams {
    pub fn validate(&self) -> Result<(), MfError> {
        let bad = |msg: &str| Err(MfError::InvalidHyperparams(msg.to_owned()));
        if self.factors == 0 {
            return bad("factors must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad("regularization must be nonnegative");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be >= 1");
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be nonnegative");
        }
        Ok(())
    }
}

/// Latent factors (row-major, `n x d` and `m x d`) plus biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FactorModel<S> {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub user_factors: Vec<S>,
    pub item_factors: Vec<S>,
    pub user_bias: Vec<S>,
    pub item_bias: Vec<S>,
    pub global_bias: S,
}

impl<S: Scalar> FactorModel<S> {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        FactorModel {
            n,
            m,
            d,
            user_factors: vec![S::zero(); n * d],
            item_factors: vec![S::zero(); m * d],
            user_bias: vec![S::zero(); n],
            item_bias: vec![S::zero(); m],
            global_bias: S::zero(),
        }
    }

    fn random(n: usize, m: usize, hp: &MfHyperparams, rng: &mut ChaCha8Rng) -> Self {
        let mut model = Self::zeros(n, m, hp.factors);
        if hp.init_std > 0.0 {
            let normal = Normal::new(0.0, hp.init_std).expect("validated std");
            for x in model.user_factors.iter_mut().chain(model.item_factors.iter_mut()) {
                *x = S::of(normal.sample(rng));
            }
        }
        model
    }

    #[inline]
    pub fn user_row(&self, u: usize) -> &[S] {
        &self.user_factors[u * self.d..(u + 1) * self.d]
    }

    #[inline]
    pub fn item_row(&self, i: usize) -> &[S] {
        &self.item_factors[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    fn predict(&self, u: usize, i: usize) -> S {
        let dot: S = self
            .user_row(u)
            .iter()
            .zip(self.item_row(i))
            .map(|(&a, &b)| a * b)
            .sum();
        self.global_bias + self.user_bias[u] + self.item_bias[i] + dot
    }

    /// `global_bias + user_bias[u] + item_bias[i] + <p_u, q_i>`.
    pub fn score(&self, user: UserId, item: ItemId) -> Result<S, MfError> {
        if user as usize >= self.n || item as usize >= self.m {
            return Err(MfError::OutOfRange { user, item });
        }
        Ok(self.predict(user as usize, item as usize))
    }

    pub fn is_finite(&self) -> bool {
        self.global_bias.is_finite()
            && self
                .user_factors
                .iter()
                .chain(&self.item_factors)
                .chain(&self.user_bias)
                .chain(&self.item_bias)
                .all(|x| x.is_finite())
    }

    fn check_shape(&self) -> Result<(), MfError> {
        let ok = self.d >= 1
            && self.user_factors.len() == self.n * self.d
            && self.item_factors.len() == self.m * self.d
            && self.user_bias.len() == self.n
            && self.item_bias.len() == self.m;
        if ok {
            Ok(())
        } else {
            Err(MfError::Shape(format!(
                "header n={} m={} d={} does not match buffers",
                self.n, self.m, self.d
            )))
        }
    }

    /// JSON checkpoint; the shape header (`n`, `m`, `d`) precedes the buffers.
    pub fn save_json<W: Write>(&self, w: W) -> Result<(), MfError> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load_json<R: Read>(r: R) -> Result<Self, MfError> {
        let model: Self = serde_json::from_reader(r)?;
        model.check_shape()?;
        Ok(model)
    }

    #[inline]
    fn sgd_step(&mut self, u: usize, i: usize, target: S, lr: S, reg: S) -> S {
        let err = target - self.predict(u, i);
        self.global_bias = self.global_bias + lr * err;
        let bu = self.user_bias[u];
        self.user_bias[u] = bu + lr * (err - reg * bu);
        let bi = self.item_bias[i];
        self.item_bias[i] = bi + lr * (err - reg * bi);
        let d = self.d;
        let (pu, qi) = (u * d, i * d);
        for k in 0..d {
            let p = self.user_factors[pu + k];
            let q = self.item_factors[qi + k];
            self.user_factors[pu + k] = p + lr * (err * q - reg * p);
            self.item_factors[qi + k] = q + lr * (err * p - reg * q);
        }
        err * err
    }
}

/// Per-epoch training diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean squared error over the examples visited in each epoch.
    pub epoch_losses: Vec<f64>,
    /// Epochs whose loss exceeded the previous epoch's by more than `1e-6`.
    pub loss_increases: Vec<usize>,
}

const LOSS_TOLERANCE: f64 = 1e-6;
const NEGATIVE_SAMPLING_ATTEMPTS: usize = 32;

pub fn train<S: Scalar>(
    store: &InteractionStore,
    hp: &MfHyperparams,
) -> Result<(FactorModel<S>, TrainReport), MfError> {
    train_from(store, hp, None)
}

/// Trains from `warm` when given (shape must match), otherwise from a seeded random start.
pub fn train_from<S: Scalar>(
    store: &InteractionStore,
    hp: &MfHyperparams,
    warm: Option<FactorModel<S>>,
) -> Result<(FactorModel<S>, TrainReport), MfError> {
    hp.validate()?;
    if store.is_empty() {
        return Err(MfError::EmptyStore);
    }
    let (n, m) = (store.n(), store.m());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = match warm {
        Some(w) => {
            if (w.n, w.m, w.d) != (n, m, hp.factors) {
                return Err(MfError::Shape(format!(
                    "warm start is {}x{}x{}, expected {}x{}x{}",
                    w.n, w.m, w.d, n, m, hp.factors
                )));
            }
            w
        }
        None => FactorModel::random(n, m, hp, &mut rng),
    };

    let mut positives: Vec<(u32, u32)> = store.interactions().map(|it| (it.user, it.item)).collect();
    let lr = S::of(hp.learning_rate);
    let reg = S::of(hp.regularization);
    let mut report = TrainReport::default();

    for epoch in 0..hp.epochs {
        positives.shuffle(&mut rng);
        let mut loss = 0.0f64;
        let mut seen = 0usize;
        for &(u, i) in &positives {
            loss += model.sgd_step(u as usize, i as usize, S::one(), lr, reg).as_f64();
            seen += 1;
            let profile = store.profile(u);
            if profile.len() >= m {
                continue;
            }
            for _ in 0..hp.negatives_per_positive {
                let neg = (0..NEGATIVE_SAMPLING_ATTEMPTS)
                    .map(|_| rng.random_range(0..m as u32))
                    .find(|j| !profile.contains_key(j));
                if let Some(j) = neg {
                    loss += model.sgd_step(u as usize, j as usize, S::zero(), lr, reg).as_f64();
                    seen += 1;
                }
            }
        }
        if !model.is_finite() || !loss.is_finite() {
            return Err(MfError::Diverged { epoch: epoch + 1 });
        }
        let mean = loss / seen.max(1) as f64;
        if let Some(&prev) = report.epoch_losses.last() {
            if mean > prev + LOSS_TOLERANCE {
                report.loss_increases.push(epoch + 1);
            }
        }
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}

/// Ranks every user's non-excluded items by descending score (ties by ascending id)
/// and keeps the first `len`.
///
/// `exclude(u)` yields the items user `u` must not be recommended. Lists are
/// shorter than `len` when candidates run out.
pub fn long_lists<S, F>(model: &FactorModel<S>, len: usize, exclude: F) -> Vec<Vec<ItemId>>
where
    S: Scalar,
    F: Fn(UserId) -> HashSet<ItemId> + Sync,
{
    (0..model.n)
        .into_par_iter()
        .map(|u| {
            let excluded = exclude(u as UserId);
            let mut scored: Vec<(S, ItemId)> = (0..model.m)
                .filter(|i| !excluded.contains(&(*i as ItemId)))
                .map(|i| (model.predict(u, i), i as ItemId))
                .collect();
            let by_rank = |a: &(S, ItemId), b: &(S, ItemId)| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            };
            if len < scored.len() && len > 0 {
                scored.select_nth_unstable_by(len - 1, by_rank);
                scored.truncate(len);
            }
            scored.sort_by(by_rank);
            scored.truncate(len);
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect()
}
