//! Scalar DPO/SFT mathematics over token-logprob dumps: sequence
//! log-likelihoods, implicit rewards, token-level credits, pairwise losses,
//! and classification accuracy.
//!
//! Nothing here touches model weights. Inputs are aligned per-token log
//! probabilities under the policy and the reference model; policy and
//! reference must share one tokenization, and mismatched lengths are a hard
//! error, never resampled. Reductions use pairwise summation so long
//! sequences keep the credit-additivity identity tight and results do not
//! depend on chunking.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DpoError {
    #[error("sequence {sequence_id} is empty")]
    EmptySequence { sequence_id: String },
    #[error("sequence {sequence_id}: tokens/policy/ref lengths differ ({tokens}/{policy}/{reference})")]
    LengthMismatch {
        sequence_id: String,
        tokens: usize,
        policy: usize,
        reference: usize,
    },
    #[error("sequence {sequence_id} contains a non-finite logprob")]
    NonFinite { sequence_id: String },
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("lambda_sft must be non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("empty input set")]
    EmptySet,
}

/// Which model's logprobs to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Policy,
    Reference,
}

/// Aligned per-token log probabilities of one sequence under the policy and
/// the reference model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenSequenceLogprobs {
    pub sequence_id: String,
    pub tokens: Vec<String>,
    pub policy_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
}

impl TokenSequenceLogprobs {
    pub fn validate(&self) -> Result<(), DpoError> {
        if self.tokens.is_empty() {
            return Err(DpoError::EmptySequence {
                sequence_id: self.sequence_id.clone(),
            });
        }
        if self.tokens.len() != self.policy_logprobs.len()
            || self.tokens.len() != self.ref_logprobs.len()
        {
            return Err(DpoError::LengthMismatch {
                sequence_id: self.sequence_id.clone(),
                tokens: self.tokens.len(),
                policy: self.policy_logprobs.len(),
                reference: self.ref_logprobs.len(),
            });
        }
        if self
            .policy_logprobs
            .iter()
            .chain(self.ref_logprobs.iter())
            .any(|v| !v.is_finite())
        {
            return Err(DpoError::NonFinite {
                sequence_id: self.sequence_id.clone(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One loss operand: the chosen and rejected sequences plus beta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoPairRecord {
    pub pair_id: String,
    pub chosen: TokenSequenceLogprobs,
    pub rejected: TokenSequenceLogprobs,
    pub beta: f64,
}

impl DpoPairRecord {
    pub fn validate(&self) -> Result<(), DpoError> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(DpoError::InvalidBeta(self.beta));
        }
        self.chosen.validate()?;
        self.rejected.validate()
    }
}

/// Everything the loss computation yields for one pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DpoPairResult {
    pub pair_id: String,
    /// Log-space margin: (policy - ref) of chosen minus (policy - ref) of
    /// rejected. Beta-free.
    pub margin: f64,
    pub loss: f64,
    #[serde(skip)]
    pub d_loss_d_margin: f64,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
    pub classified_correct: bool,
}

/// Per-token share of a sequence's implicit reward.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenCredit {
    pub sequence_id: String,
    /// `(token, credit)` pairs in sequence order; credits sum to the
    /// sequence's implicit reward.
    pub credits: Vec<(String, f64)>,
}

impl TokenCredit {
    pub fn total(&self) -> f64 {
        let values: Vec<f64> = self.credits.iter().map(|(_, c)| *c).collect();
        pairwise_sum(&values)
    }
}

/// Summation with a fixed pairwise reduction tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sum of per-token logprobs under the requested model.
pub fn sequence_logprob(seq: &TokenSequenceLogprobs, model: Model) -> Result<f64, DpoError> {
    seq.validate()?;
    let values = match model {
        Model::Policy => &seq.policy_logprobs,
        Model::Reference => &seq.ref_logprobs,
    };
    Ok(pairwise_sum(values))
}

/// Mean next-token NLL under the requested model: `-sum / len`. This is the
/// per-sequence SFT loss value.
pub fn mean_nll(seq: &TokenSequenceLogprobs, model: Model) -> Result<f64, DpoError> {
    let sum = sequence_logprob(seq, model)?;
    Ok(-sum / seq.len() as f64)
}

/// Implicit reward of one sequence: `beta * (log pi_policy - log pi_ref)`.
pub fn implicit_reward(seq: &TokenSequenceLogprobs, beta: f64) -> Result<f64, DpoError> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(DpoError::InvalidBeta(beta));
    }
    let policy = sequence_logprob(seq, Model::Policy)?;
    let reference = sequence_logprob(seq, Model::Reference)?;
    Ok(beta * (policy - reference))
}

/// Per-token decomposition of the implicit reward:
/// `credit_t = beta * (policy_t - ref_t)`.
pub fn token_credits(seq: &TokenSequenceLogprobs, beta: f64) -> Result<TokenCredit, DpoError> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(DpoError::InvalidBeta(beta));
    }
    seq.validate()?;
    let credits = seq
        .tokens
        .iter()
        .zip(seq.policy_logprobs.iter().zip(seq.ref_logprobs.iter()))
        .map(|(token, (p, r))| (token.clone(), beta * (p - r)))
        .collect();
    Ok(TokenCredit {
        sequence_id: seq.sequence_id.clone(),
        credits,
    })
}

/// Pairwise DPO loss: `-log sigmoid(beta * margin)`, computed as
/// `softplus(-beta * margin)`, with its analytic derivative
/// `d loss / d margin = -beta * sigmoid(-beta * margin)`.
pub fn dpo_loss(pair: &DpoPairRecord) -> Result<DpoPairResult, DpoError> {
    pair.validate()?;
    let reward_chosen = implicit_reward(&pair.chosen, pair.beta)?;
    let reward_rejected = implicit_reward(&pair.rejected, pair.beta)?;
    let delta_chosen = sequence_logprob(&pair.chosen, Model::Policy)?
        - sequence_logprob(&pair.chosen, Model::Reference)?;
    let delta_rejected = sequence_logprob(&pair.rejected, Model::Policy)?
        - sequence_logprob(&pair.rejected, Model::Reference)?;
    let margin = delta_chosen - delta_rejected;
    let loss = softplus(-pair.beta * margin);
    let d_loss_d_margin = -pair.beta * sigmoid(-pair.beta * margin);
    Ok(DpoPairResult {
        pair_id: pair.pair_id.clone(),
        margin,
        loss,
        d_loss_d_margin,
        reward_chosen,
        reward_rejected,
        classified_correct: reward_chosen > reward_rejected,
    })
}

/// DPO loss augmented with the SFT term on the chosen response:
/// `loss + lambda_sft * mean_nll(chosen)` under the policy.
pub fn dpo_loss_with_sft(pair: &DpoPairRecord, lambda_sft: f64) -> Result<f64, DpoError> {
    if lambda_sft < 0.0 {
        return Err(DpoError::InvalidLambda(lambda_sft));
    }
    let base = dpo_loss(pair)?;
    Ok(base.loss + lambda_sft * mean_nll(&pair.chosen, Model::Policy)?)
}

/// Fraction of pairs whose chosen implicit reward strictly exceeds the
/// rejected one; ties count as misclassified. The decision depends only on
/// the sign of the margin, so it is invariant under any beta > 0.
pub fn classification_accuracy(pairs: &[DpoPairRecord]) -> Result<f64, DpoError> {
    if pairs.is_empty() {
        return Err(DpoError::EmptySet);
    }
    let mut correct = 0usize;
    for pair in pairs {
        if dpo_loss(pair)?.classified_correct {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Mean implicit reward a checkpoint assigns to its own rollouts; rising
/// self-reward against flat true accuracy is the reward-hacking signature.
pub fn self_reward(dumps: &[TokenSequenceLogprobs], beta: f64) -> Result<f64, DpoError> {
    if dumps.is_empty() {
        return Err(DpoError::EmptySet);
    }
    let rewards = dumps
        .iter()
        .map(|seq| implicit_reward(seq, beta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pairwise_sum(&rewards) / rewards.len() as f64)
}
