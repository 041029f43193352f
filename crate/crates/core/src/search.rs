//! Constrained random architecture sampling and multi-trial ranking.

use std::cmp::Ordering;
use std::io::Write;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::eval::evaluate;
use crate::model::{count_params, ArchitectureSpec, BlockSequenceSpec, ModelError, ModelSpec, Network, MAX_SEQUENCE_CHANNELS};
use crate::rng;
use crate::train::{train, TrainConfig};

const SAMPLER_STREAM: u64 = 0x5A4;
/// Channel draws are taken from this many leading entries of the current menu.
pub const MENU_WINDOW: usize = 3;

/// Value sets the sampler draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParamSpace {
    pub expansion_factors: Vec<usize>,
    pub num_block_sequences: Vec<usize>,
    pub max_sequence_len: Vec<usize>,
    pub first_conv_channels: Vec<usize>,
    pub last_conv_channels: Vec<usize>,
    /// `0` selects the global-average-pool head.
    pub fc_units: Vec<usize>,
    pub channel_menu: Vec<usize>,
}

impl Default for HyperParamSpace {
    fn default() -> Self {
        Self {
            expansion_factors: vec![2, 4, 6, 8],
            num_block_sequences: vec![3, 4, 5],
            max_sequence_len: vec![2, 4, 6, 8, 10],
            first_conv_channels: vec![16, 24, 32, 48],
            last_conv_channels: vec![128, 256],
            fc_units: vec![0, 128, 256],
            channel_menu: vec![32, 48, 64, 96, 128, 256],
        }
    }
}

impl HyperParamSpace {
    /// Narrow space of small, quick-to-train networks for single-machine runs.
    pub fn desk() -> Self {
        Self {
            expansion_factors: vec![2],
            num_block_sequences: vec![3],
            max_sequence_len: vec![2],
            first_conv_channels: vec![8],
            last_conv_channels: vec![128],
            fc_units: vec![0],
            channel_menu: vec![32, 48, 64, 96, 128],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let lists = [
            ("expansion_factors", &self.expansion_factors),
            ("num_block_sequences", &self.num_block_sequences),
            ("max_sequence_len", &self.max_sequence_len),
            ("first_conv_channels", &self.first_conv_channels),
            ("last_conv_channels", &self.last_conv_channels),
            ("fc_units", &self.fc_units),
            ("channel_menu", &self.channel_menu),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(ModelError::InvalidSpec(format!("{name} is empty")));
            }
        }
        let positive = [
            ("expansion_factors", &self.expansion_factors),
            ("num_block_sequences", &self.num_block_sequences),
            ("max_sequence_len", &self.max_sequence_len),
            ("first_conv_channels", &self.first_conv_channels),
            ("last_conv_channels", &self.last_conv_channels),
        ];
        for (name, list) in positive {
            if list.contains(&0) {
                return Err(ModelError::InvalidSpec(format!("{name} contains 0")));
            }
        }
        let menu = &self.channel_menu;
        if menu[0] == 0 || menu.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidSpec("channel_menu must be positive and strictly increasing".into()));
        }
        if *menu.last().expect("non-empty") > MAX_SEQUENCE_CHANNELS {
            return Err(ModelError::InvalidSpec(format!("channel_menu exceeds {MAX_SEQUENCE_CHANNELS}")));
        }
        Ok(())
    }
}

/// The scalar draws behind one sampled architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledHyperParams {
    pub expansion: usize,
    pub num_sequences: usize,
    pub max_sequence_len: usize,
    pub stem_channels: usize,
    pub last_conv_channels: usize,
    pub head_units: usize,
}

/// Draws one architecture; a pure function of `(space, seed, num_classes)`.
///
/// The expansion factor is shared by every block. Each sequence's width is
/// drawn from the first three entries of the remaining channel menu, after
/// which entries below the draw are discarded.
pub fn sample_architecture(space: &HyperParamSpace, seed: u64, num_classes: usize) -> ArchitectureSpec {
    sample_with_hyperparams(space, seed, num_classes).1
}

/// [`sample_architecture`] together with the draws that produced it.
pub fn sample_with_hyperparams(
    space: &HyperParamSpace,
    seed: u64,
    num_classes: usize,
) -> (SampledHyperParams, ArchitectureSpec) {
    let mut r = rng::derived(seed, &[SAMPLER_STREAM]);
    let pick = |r: &mut rng::Rng, list: &[usize]| *list.choose(r).expect("non-empty value list");
    let hp = SampledHyperParams {
        expansion: pick(&mut r, &space.expansion_factors),
        num_sequences: pick(&mut r, &space.num_block_sequences),
        max_sequence_len: pick(&mut r, &space.max_sequence_len),
        stem_channels: pick(&mut r, &space.first_conv_channels),
        last_conv_channels: pick(&mut r, &space.last_conv_channels),
        head_units: pick(&mut r, &space.fc_units),
    };

    let mut menu = space.channel_menu.clone();
    let sequences = (0..hp.num_sequences)
        .map(|_| {
            let window = menu.len().min(MENU_WINDOW);
            let channels = menu[r.random_range(0..window)];
            menu.retain(|&c| c >= channels);
            let length = r.random_range(1..=hp.max_sequence_len);
            BlockSequenceSpec::new(hp.expansion, channels, length, 2)
        })
        .collect();
    let spec = ArchitectureSpec {
        input_size: Default::default(),
        stem_channels: hp.stem_channels,
        sequences,
        last_conv_channels: hp.last_conv_channels,
        head_units: hp.head_units,
        num_classes,
    };
    (hp, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub top1: f64,
    pub top4: f64,
    pub top10: f64,
    pub footprint_bytes: u64,
    pub wall_time: f64,
    /// Generator behind `seed`.
    pub rng: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Successful trials first, then top-1 descending, footprint ascending, seed ascending.
pub fn rank_order(a: &TrialResult, b: &TrialResult) -> Ordering {
    b.succeeded()
        .cmp(&a.succeeded())
        .then(b.top1.total_cmp(&a.top1))
        .then(a.footprint_bytes.cmp(&b.footprint_bytes))
        .then(a.seed.cmp(&b.seed))
}

pub fn rank_trials(results: &mut [TrialResult]) {
    results.sort_by(rank_order);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub failures: usize,
    pub best_top1: f64,
    /// Best minus worst top-1 among the ten best successful trials.
    pub top10_spread: f64,
    pub rng: String,
}

/// Summary of an already ranked list.
pub fn summarize(ranked: &[TrialResult]) -> TrialSummary {
    let ok: Vec<&TrialResult> = ranked.iter().filter(|t| t.succeeded()).collect();
    let best10 = &ok[..ok.len().min(10)];
    let spread = match (best10.first(), best10.last()) {
        (Some(a), Some(b)) => a.top1 - b.top1,
        _ => 0.0,
    };
    TrialSummary {
        trials: ranked.len(),
        failures: ranked.len() - ok.len(),
        best_top1: ok.first().map_or(0.0, |t| t.top1),
        top10_spread: spread,
        rng: rng::RNG_ALGORITHM.to_string(),
    }
}

fn run_one(space: &HyperParamSpace, seed: u64, config: &TrainConfig, data: &Split) -> TrialResult {
    let start = Instant::now();
    let spec = sample_architecture(space, seed, data.train.num_classes());
    let footprint_bytes = count_params(&ModelSpec::from(spec.clone())).footprint_bytes();
    let outcome = (|| -> Result<_, Box<dyn std::error::Error>> {
        let mut net = Network::<f32>::build(spec.clone(), seed)?;
        let config = TrainConfig { seed, ..config.clone() };
        let (train_set, holdout) = data.train.split_holdout();
        train(&mut net, &train_set, &holdout, &config)?;
        Ok(evaluate(&net, &data.test)?)
    })();
    let (top1, top4, top10, error) = match outcome {
        Ok(r) => (r.cr1, r.cr4, r.cr10, None),
        Err(e) => (0.0, 0.0, 0.0, Some(e.to_string())),
    };
    TrialResult {
        spec,
        seed,
        top1,
        top4,
        top10,
        footprint_bytes,
        wall_time: start.elapsed().as_secs_f64(),
        rng: rng::RNG_ALGORITHM.to_string(),
        error,
    }
}

/// Samples, trains and scores `count` architectures with seeds `base_seed..base_seed+count`.
///
/// Model selection uses a holdout carved from `data.train`; `data.test` only scores.
///
/// Failed trials are recorded with their error and ranked last. `on_trial` sees
/// each result as it completes.
pub fn run_trials(
    space: &HyperParamSpace,
    count: usize,
    base_seed: u64,
    config: &TrainConfig,
    data: &Split,
    on_trial: &mut dyn FnMut(&TrialResult),
) -> Result<Vec<TrialResult>, ModelError> {
    space.validate()?;
    if count == 0 {
        return Err(ModelError::InvalidSpec("trial count must be at least 1".into()));
    }
    let mut results = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let r = run_one(space, base_seed + i, config, data);
        on_trial(&r);
        results.push(r);
    }
    rank_trials(&mut results);
    Ok(results)
}

/// One JSON object per line.
pub fn write_jsonl(results: &[TrialResult], mut out: impl Write) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
