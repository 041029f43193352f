//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `HZR_ACCEPT_ONLY=3,10` runs a subset. The digit corpus is read from
//! `HZR_MNIST_DIR`, falling back to `<workspace>/data/mnist`.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use hzr_core::data::{generate_glyphs, load_idx_dir, Dataset, ElasticParams, GlyphInventory, Split};
use hzr_core::eval::{
    comparison_table, evaluate, inventory_scaling_report, scaling_table, ComparisonRow, ErrorRatio, EvalReport,
};
use hzr_core::model::checkpoint::{from_bytes, to_bytes, CheckpointError};
use hzr_core::model::{
    count_params, ArchitectureSpec, BlockSequenceSpec, Bottleneck, LeNetSpec, ModelSpec, Network, RowInput,
    MAX_SEQUENCE_CHANNELS,
};
use hzr_core::nn::gradcheck::{check_gradient, check_layer, GradCheck};
use hzr_core::nn::ops::softmax_cross_entropy;
use hzr_core::nn::{
    BatchNorm, Conv2d, Dense, DepthwiseConv2d, GlobalAvgPool, Layer, MaxPool2d, Padding, ParamKind, Relu, Relu6, Shape, Tensor,
};
use hzr_core::rng;
use hzr_core::search::{sample_architecture, sample_with_hyperparams, HyperParamSpace};
use hzr_core::train::{fit_learning_curve, run_learning_curve, train, LearningCurvePoint, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("gradient correctness", gradients),
        ("architecture fidelity", fidelity),
        ("footprint arithmetic", footprint),
        ("sampler soundness", sampler),
        ("desk-scale digit training", digits),
        ("augmentation effect", augmentation),
        ("inventory scaling", inventory_scaling),
        ("learning-curve fitter", learning_curve),
        ("baseline comparison", baseline),
        ("serialization", serialization),
        ("latency", latency),
        ("determinism", determinism),
    ];
    let only: Option<HashSet<usize>> = std::env::var("HZR_ACCEPT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("SKIP [{id:02}] {name}");
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id:02}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                println!("FAIL [{id:02}] {name} ({secs:.1}s): {detail}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- helpers

fn uniform(shape: Shape, r: &mut rng::Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.len()).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `[-2, 8]` kept at least 0.05 away from 0 and 6.
fn away_from_kinks(shape: Shape, r: &mut rng::Rng) -> Tensor<f64> {
    let data = (0..shape.len())
        .map(|_| loop {
            let v: f64 = r.random_range(-2.0..8.0);
            if v.abs() > 0.05 && (v - 6.0).abs() > 0.05 {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Weights and shifts in `[-1, 1]`; batch-norm scales in `[0.5, 1.5]` around their initial 1.
fn randomize_params(layer: &mut dyn Layer<f64>, r: &mut rng::Rng) {
    for p in layer.params_mut() {
        let range = match p.kind {
            ParamKind::BnScale => 0.5..1.5,
            k if k.trainable() => -1.0..1.0,
            _ => continue,
        };
        for v in p.tensor.data_mut() {
            *v = r.random_range(range.clone());
        }
    }
}

fn probe_for(layer: &dyn Layer<f64>, input: Shape, r: &mut rng::Rng) -> Tensor<f64> {
    uniform(layer.output_shape(input).unwrap(), r, -1.0, 1.0)
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("HZR_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_mnist() -> Result<(Dataset, Dataset), String> {
    let dir = mnist_dir();
    let hint = |e: hzr_core::data::DataError| {
        format!("digit corpus unavailable at {} ({e}); run scripts/fetch_mnist.sh", dir.display())
    };
    Ok((load_idx_dir(&dir, true).map_err(hint)?, load_idx_dir(&dir, false).map_err(hint)?))
}

/// Small global-pool model shared by the glyph and small-subset runs.
fn compact_spec(num_classes: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        input_size: Default::default(),
        stem_channels: 8,
        sequences: vec![
            BlockSequenceSpec::new(2, 32, 1, 2),
            BlockSequenceSpec::new(2, 48, 1, 2),
            BlockSequenceSpec::new(2, 64, 1, 2),
        ],
        last_conv_channels: 128,
        head_units: 0,
        num_classes,
    }
}

fn config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        batch_size: 32,
        epochs,
        seed,
        ..Default::default()
    }
}

fn empty(d: &Dataset) -> Dataset {
    d.subset(&[])
}

fn fit_and_score(spec: impl Into<ModelSpec>, split: &Split, cfg: &TrainConfig) -> Result<(EvalReport, u64), String> {
    let mut net = Network::build(spec, cfg.seed).map_err(|e| e.to_string())?;
    train(&mut net, &split.train, &empty(&split.train), cfg).map_err(|e| e.to_string())?;
    let report = evaluate(&net, &split.test).map_err(|e| e.to_string())?;
    Ok((report, count_params(net.spec()).footprint_bytes()))
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

// ---------------------------------------------------------------- criteria

fn gradients() -> Outcome {
    const EPS: f64 = 1e-4;
    let mut results: Vec<(String, GradCheck)> = Vec::new();
    for seed in 0..2u64 {
        let mut r = rng::seeded(1000 + seed);
        let mut check = |label: &str, layer: &mut dyn Layer<f64>, input: Tensor<f64>, r: &mut rng::Rng| {
            randomize_params(layer, r);
            let probe = probe_for(layer, input.shape(), r);
            let report = check_layer(layer, &input, &probe, EPS).map_err(|e| format!("{label}: {e}"))?;
            results.push((format!("{label}#{seed}"), report));
            Ok::<_, String>(())
        };
        let x = uniform(Shape::new(2, 2, 5, 5), &mut r, -1.0, 1.0);
        check("conv3x3", &mut Conv2d::new("c", 2, 3, 3, 1, Padding::Same, true, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 2, 6, 6), &mut r, -1.0, 1.0);
        check("conv3x3/s2", &mut Conv2d::new("c", 2, 3, 3, 2, Padding::Same, false, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 2, 5, 5), &mut r, -1.0, 1.0);
        check("conv3x3/valid", &mut Conv2d::new("c", 2, 2, 3, 1, Padding::Valid, true, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 3, 4, 4), &mut r, -1.0, 1.0);
        check("pointwise", &mut Conv2d::new("c", 3, 4, 1, 1, Padding::Same, false, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 3, 5, 5), &mut r, -1.0, 1.0);
        check("depthwise", &mut DepthwiseConv2d::new("d", 3, 3, 1, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 3, 7, 6), &mut r, -1.0, 1.0);
        check("depthwise/s2", &mut DepthwiseConv2d::new("d", 3, 3, 2, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(3, 2, 3, 3), &mut r, -2.0, 2.0);
        check("batchnorm", &mut BatchNorm::new("bn", 2), x, &mut r)?;
        let x = away_from_kinks(Shape::new(2, 2, 3, 3), &mut r);
        check("relu6", &mut Relu6::new("a"), x, &mut r)?;
        let x = away_from_kinks(Shape::new(2, 2, 3, 3), &mut r);
        check("relu", &mut Relu::new("a"), x, &mut r)?;
        let x = uniform(Shape::new(3, 5, 1, 1), &mut r, -1.0, 1.0);
        check("dense", &mut Dense::new("fc", 5, 4, &mut r), x, &mut r)?;
        let x = uniform(Shape::new(2, 3, 3, 3), &mut r, -1.0, 1.0);
        check("global-avg-pool", &mut GlobalAvgPool::new("gap"), x, &mut r)?;
        // distinct values 0.01 apart keep every window's maximum unambiguous
        let shape = Shape::new(2, 2, 4, 4);
        let mut ranks: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01).collect();
        ranks.shuffle(&mut r);
        check("max-pool", &mut MaxPool2d::new("p", 2, 2), Tensor::from_vec(shape, ranks).unwrap(), &mut r)?;

        for (label, in_c, t, out_c, stride, hw) in [("bottleneck/residual", 4, 2, 4, 1, 5), ("bottleneck/s2", 3, 3, 5, 2, 6)] {
            // redraw until no activation input sits within 1e-3 of a kink
            let (mut block, x) = loop {
                let mut block = Bottleneck::<f64>::new("b", in_c, t, out_c, stride, &mut r);
                randomize_params(&mut block, &mut r);
                let x = uniform(Shape::new(3, in_c, hw, hw), &mut r, -1.0, 1.0);
                block.forward_train(&x).map_err(|e| e.to_string())?;
                let clear = block
                    .activation_inputs()
                    .iter()
                    .flat_map(|a| a.data())
                    .all(|v| v.abs() > 1e-3 && (v - 6.0).abs() > 1e-3);
                block.clear_cache();
                if clear {
                    break (block, x);
                }
            };
            ensure(block.has_residual() == (stride == 1 && in_c == out_c), || format!("{label}: residual flag"))?;
            let probe = probe_for(&block, x.shape(), &mut r);
            let report = check_layer(&mut block, &x, &probe, EPS).map_err(|e| format!("{label}: {e}"))?;
            results.push((format!("{label}#{seed}"), report));
        }

        let logits = uniform(Shape::new(3, 5, 1, 1), &mut r, -2.0, 2.0);
        let labels = [0usize, 3, 4];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).map_err(|e| e.to_string())?;
        let report = check_gradient(
            |v| {
                let t = Tensor::from_vec(logits.shape(), v.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels).unwrap().0
            },
            logits.data(),
            grad.data(),
            EPS,
        );
        results.push((format!("softmax-xent#{seed}"), report));
    }
    let worst = results
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .unwrap();
    let entries: usize = results.iter().map(|(_, r)| r.checked).sum();
    ensure(results.len() >= 20, || format!("only {} instances", results.len()))?;
    ensure(worst.1.max_rel_error < 1e-4, || {
        format!("{} worst rel error {:.2e} at {}", worst.0, worst.1.max_rel_error, worst.1.worst)
    })?;
    Ok(format!(
        "{} instances, {entries} entries, max rel error {:.2e} ({})",
        results.len(),
        worst.1.max_rel_error,
        worst.0
    ))
}

fn fidelity() -> Outcome {
    type Row = (&'static str, &'static str, Option<usize>, usize, usize, Option<usize>);
    let type1: [Row; 8] = [
        ("48×48×1", "conv2D", None, 16, 1, Some(1)),
        ("48×48×16", "bottleneck", Some(8), 64, 4, Some(2)),
        ("24×24×64", "bottleneck", Some(8), 64, 4, Some(2)),
        ("12×12×64", "bottleneck", Some(8), 64, 4, Some(2)),
        ("6×6×64", "bottleneck", Some(8), 96, 2, Some(2)),
        ("3×3×96", "conv2D", None, 128, 1, Some(1)),
        ("3×3×128", "dense", None, 128, 1, None),
        ("128", "dense", None, 30_000, 1, None),
    ];
    let type2: [Row; 7] = [
        ("48×48×1", "conv2D", None, 24, 1, Some(1)),
        ("48×48×24", "bottleneck", Some(4), 32, 7, Some(2)),
        ("24×24×32", "bottleneck", Some(4), 64, 8, Some(2)),
        ("12×12×64", "bottleneck", Some(4), 96, 4, Some(2)),
        ("6×6×96", "conv2D", None, 128, 1, Some(1)),
        ("6×6×128", "global avg. pooling", None, 128, 1, Some(1)),
        ("128", "dense", None, 30_000, 1, None),
    ];
    let compare = |label: &str, spec: ArchitectureSpec, want: &[Row]| -> Result<(), String> {
        let net = Network::<f32>::build(spec, 0).map_err(|e| e.to_string())?;
        ensure(net.summary().len() == want.len(), || {
            format!("{label}: {} rows, expected {}", net.summary().len(), want.len())
        })?;
        for (i, (row, w)) in net.summary().iter().zip(want).enumerate() {
            let actual = (row.input.to_string(), row.layer.as_str(), row.t, row.c, row.n, row.s);
            ensure(
                actual.0 == w.0 && actual.1 == w.1 && (actual.2, actual.3, actual.4, actual.5) == (w.2, w.3, w.4, w.5),
                || format!("{label} row {i}: got {actual:?}, expected {w:?}"),
            )?;
        }
        let logits = net.forward(&Tensor::filled(net.input_shape(1), 0.5)).map_err(|e| e.to_string())?;
        ensure(logits.shape() == Shape::new(1, 30_000, 1, 1), || format!("{label}: logits {}", logits.shape()))?;
        ensure(matches!(net.summary().last().unwrap().input, RowInput::Flat(128)), || format!("{label}: head input"))
    };
    compare("type 1", ArchitectureSpec::type1(30_000), &type1)?;
    compare("type 2", ArchitectureSpec::type2(30_000), &type2)?;
    Ok("8/8 and 7/7 rows match; forward emits 30000 logits".into())
}

fn footprint() -> Outcome {
    let mib = |spec: ArchitectureSpec| count_params(&ModelSpec::from(spec)).footprint_mib();
    let t1 = mib(ArchitectureSpec::type1(30_000));
    let t2 = mib(ArchitectureSpec::type2(30_000));
    let t1_wide = mib(ArchitectureSpec::type1(30_000).with_head_units(256));
    let t2_wide = mib(ArchitectureSpec::type2(30_000).with_head_units(256));
    let share = count_params(&ModelSpec::from(ArchitectureSpec::type1(30_000))).share("classifier");
    ensure((t1 - 19.0).abs() <= 19.0 * 0.15, || format!("type 1 {t1:.2} MB outside 19 ± 15%"))?;
    ensure((t2 - 17.0).abs() <= 17.0 * 0.15, || format!("type 2 {t2:.2} MB outside 17 ± 15%"))?;
    ensure(t1_wide > 30.0 && t2_wide > 30.0, || {
        format!("256-unit heads give {t1_wide:.2} / {t2_wide:.2} MB")
    })?;
    ensure(share > 0.75, || format!("classifier share {share:.3}"))?;
    Ok(format!(
        "type 1 {t1:.2} MB, type 2 {t2:.2} MB, 256-unit heads {t1_wide:.2} / {t2_wide:.2} MB, classifier share {:.1}%",
        share * 100.0
    ))
}

fn sampler() -> Outcome {
    const SAMPLES: u64 = 10_000;
    let space = HyperParamSpace::default();
    let mut tallies: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut by_len: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let first_menu: Vec<usize> = space.channel_menu[..3].to_vec();
    for seed in 0..SAMPLES {
        let (hp, spec) = sample_with_hyperparams(&space, seed, 10);
        let fail = |what: &str| format!("seed {seed}: {what} in {spec:?}");
        ensure(spec.sequences.len() == hp.num_sequences, || fail("sequence count"))?;
        ensure(spec.sequences.windows(2).all(|w| w[0].channels <= w[1].channels), || fail("decreasing channels"))?;
        ensure(spec.sequences.iter().all(|s| s.channels <= MAX_SEQUENCE_CHANNELS), || fail("channels > 256"))?;
        ensure(first_menu.contains(&spec.sequences[0].channels), || fail("first channel"))?;
        ensure(spec.sequences.iter().all(|s| s.expansion == hp.expansion), || fail("expansion not shared"))?;
        ensure(spec.sequences.iter().all(|s| (1..=hp.max_sequence_len).contains(&s.length)), || fail("length"))?;
        ensure(spec.sequences.iter().all(|s| space.channel_menu.contains(&s.channels)), || fail("off-menu channel"))?;
        for (name, v) in [
            ("expansion", hp.expansion),
            ("sequences", hp.num_sequences),
            ("max length", hp.max_sequence_len),
            ("first conv", hp.stem_channels),
            ("last conv", hp.last_conv_channels),
            ("fc units", hp.head_units),
            ("first channel", spec.sequences[0].channels),
        ] {
            *tallies.entry(name).or_default().entry(v).or_default() += 1;
        }
        for s in &spec.sequences {
            *by_len.entry(hp.max_sequence_len).or_default().entry(s.length).or_default() += 1;
        }
    }
    let domains: BTreeMap<&str, Vec<usize>> = [
        ("expansion", space.expansion_factors.clone()),
        ("sequences", space.num_block_sequences.clone()),
        ("max length", space.max_sequence_len.clone()),
        ("first conv", space.first_conv_channels.clone()),
        ("last conv", space.last_conv_channels.clone()),
        ("fc units", space.fc_units.clone()),
        ("first channel", first_menu),
    ]
    .into_iter()
    .collect();
    let mut worst = 0.0f64;
    for (name, values) in &domains {
        let counts = &tallies[name];
        for v in values {
            let freq = *counts.get(v).unwrap_or(&0) as f64 / SAMPLES as f64;
            let dev = (freq - 1.0 / values.len() as f64).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.02, || format!("{name}={v} frequency {freq:.4}"))?;
        }
    }
    for (max_len, counts) in &by_len {
        let total: usize = counts.values().sum();
        for len in 1..=*max_len {
            let freq = *counts.get(&len).unwrap_or(&0) as f64 / total as f64;
            let dev = (freq - 1.0 / *max_len as f64).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.02, || format!("length {len} under max {max_len}: frequency {freq:.4}"))?;
        }
    }
    Ok(format!("{SAMPLES} samples valid; largest marginal deviation {:.2} points", worst * 100.0))
}

fn digits() -> Outcome {
    const EPOCHS: usize = DIGIT_EPOCHS;
    const SEED: u64 = 0;
    let start = Instant::now();
    let (train_all, test) = load_mnist()?;
    let (train_part, holdout) = train_all.split_holdout();
    let spec = sample_architecture(&HyperParamSpace::desk(), SEED, 10);
    let params = count_params(&ModelSpec::from(spec.clone())).total;
    ensure(params <= 300_000, || format!("sampled model has {params} parameters"))?;
    let mut net = Network::build(spec, SEED).map_err(|e| e.to_string())?;
    let out = train(&mut net, &train_part, &holdout, &config(EPOCHS, SEED)).map_err(|e| e.to_string())?;
    let report = evaluate(&net, &test).map_err(|e| e.to_string())?;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let detail = format!(
        "{params} params, {EPOCHS} epochs ({} train / {} holdout), best epoch {}, test CR(1) {} CR(4) {} CR(10) {}, {minutes:.1} min on one core",
        train_part.len(),
        holdout.len(),
        out.best_epoch,
        pct(report.cr1),
        pct(report.cr4),
        pct(report.cr10)
    );
    ensure(report.cr1 <= report.cr4 && report.cr4 <= report.cr10, || format!("CR ordering broken: {detail}"))?;
    ensure(report.cr1 >= 0.97, || format!("CR(1) below 97%: {detail}"))?;
    ensure(minutes <= 60.0, || format!("over 60 min: {detail}"))?;
    Ok(detail)
}

const DIGIT_EPOCHS: usize = 2;

fn augmentation() -> Outcome {
    const SUBSET: usize = 1000;
    const EPOCHS: usize = 15;
    let (train_all, test) = load_mnist()?;
    let (pool, holdout_pool) = train_all.split_holdout();
    let mut plain = Vec::new();
    let mut warped = Vec::new();
    for seed in 0..3u64 {
        let subset = pool.stratified_count(SUBSET, seed).map_err(|e| e.to_string())?;
        let holdout = holdout_pool.stratified_count(SUBSET, seed).map_err(|e| e.to_string())?;
        for (aug, sink) in [(None, &mut plain), (Some(ElasticParams::default()), &mut warped)] {
            let cfg = TrainConfig {
                augmentation: aug,
                ..config(EPOCHS, seed)
            };
            let mut net = Network::build(compact_spec(10), seed).map_err(|e| e.to_string())?;
            train(&mut net, &subset, &holdout, &cfg).map_err(|e| e.to_string())?;
            sink.push(evaluate(&net, &test).map_err(|e| e.to_string())?.cr1);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (p, w) = (mean(&plain), mean(&warped));
    let detail = format!(
        "mean CR(1) without {} / with {} (runs {:?} vs {:?})",
        pct(p),
        pct(w),
        plain.iter().map(|v| pct(*v)).collect::<Vec<_>>(),
        warped.iter().map(|v| pct(*v)).collect::<Vec<_>>()
    );
    ensure(w >= p - 0.002, || detail.clone())?;
    Ok(detail)
}

fn inventory_scaling() -> Outcome {
    const PER_CLASS: usize = 20;
    const EPOCHS: usize = 10;
    let mut results = Vec::new();
    for classes in [100usize, 800] {
        let split = generate_glyphs(&GlyphInventory::new(classes, PER_CLASS, 11));
        let (report, _) = fit_and_score(compact_spec(classes), &split, &config(EPOCHS, 3))?;
        results.push((classes, report));
    }
    let rows = inventory_scaling_report(&results).map_err(|e| e.to_string())?;
    let table = scaling_table(&rows);
    let row = &rows[0];
    let detail = format!(
        "CR(1) {} at C=100, {} at C=800; {}",
        pct(row.from_cr1),
        pct(row.to_cr1),
        table.lines().last().unwrap_or("").trim()
    );
    match row.error_ratio {
        ErrorRatio::Finite(r) if r < 8.0 => Ok(format!("error ratio {r:.2} < 8; {detail}")),
        ErrorRatio::Finite(r) => Err(format!("error ratio {r:.2}; {detail}")),
        ErrorRatio::ZeroBaseline => Err(format!("no errors at C=100, ratio undefined; {detail}")),
    }
}

fn learning_curve() -> Outcome {
    let points: Vec<LearningCurvePoint> = [30usize, 100, 300, 1000, 3000, 10_000]
        .iter()
        .map(|&n| LearningCurvePoint {
            train_size: n,
            error_rate: 0.9 * (n as f64).powf(-0.4),
        })
        .collect();
    let exact = fit_learning_curve(&points).map_err(|e| e.to_string())?;
    ensure((exact.exponent + 0.4).abs() < 1e-6, || format!("synthetic exponent {}", exact.exponent))?;
    ensure((exact.coefficient() - 0.9).abs() < 1e-6, || format!("synthetic coefficient {}", exact.coefficient()))?;

    let split = generate_glyphs(&GlyphInventory::new(100, 50, 21));
    let curve = run_learning_curve(
        &ModelSpec::from(compact_spec(100)),
        &split.train,
        &split.test,
        &[0.1, 0.3, 1.0],
        &config(10, 5),
    )
    .map_err(|e| e.to_string())?;
    let shown: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("n={} err={:.3}", p.train_size, p.error_rate))
        .collect();
    let fit = curve.fit.ok_or_else(|| format!("no fit from {shown:?}"))?;
    ensure(fit.exponent < 0.0, || format!("glyph exponent {} from {shown:?}", fit.exponent))?;
    Ok(format!(
        "synthetic b={:.8}; glyph points [{}], b={:.3}",
        exact.exponent,
        shown.join(", "),
        fit.exponent
    ))
}

fn baseline() -> Outcome {
    const CLASSES: usize = 100;
    let lenet = LeNetSpec::baseline(CLASSES);
    // three sequences leave a 6×6×128 map under the same 128-unit dense head as the baseline
    let mobile = ArchitectureSpec {
        input_size: Default::default(),
        stem_channels: 8,
        sequences: vec![
            BlockSequenceSpec::new(2, 32, 1, 2),
            BlockSequenceSpec::new(2, 64, 1, 2),
            BlockSequenceSpec::new(2, 128, 1, 2),
        ],
        last_conv_channels: 128,
        head_units: 128,
        num_classes: CLASSES,
    };
    let lb = count_params(&ModelSpec::from(lenet.clone())).footprint_bytes() as f64;
    let mb = count_params(&ModelSpec::from(mobile.clone())).footprint_bytes() as f64;
    ensure((mb / lb - 1.0).abs() <= 0.30, || format!("footprints {mb} vs {lb} bytes"))?;
    let split = generate_glyphs(&GlyphInventory::new(CLASSES, 30, 31));
    let cfg = config(8, 7);
    let (m_report, m_bytes) = fit_and_score(mobile, &split, &cfg)?;
    let (l_report, l_bytes) = fit_and_score(lenet, &split, &cfg)?;
    let table = comparison_table(&[
        ComparisonRow {
            model: "mobileNetV2".into(),
            report: &m_report,
            footprint_bytes: m_bytes,
        },
        ComparisonRow {
            model: "LeNet".into(),
            report: &l_report,
            footprint_bytes: l_bytes,
        },
    ]);
    println!("{table}");
    let chance = 1.0 / CLASSES as f64;
    ensure(m_report.cr1 > 5.0 * chance && l_report.cr1 > 5.0 * chance, || {
        format!("a model failed to train:\n{table}")
    })?;
    Ok(format!(
        "footprints {:.0} KB vs {:.0} KB; top-1 gap {:+.1} points",
        mb / 1024.0,
        lb / 1024.0,
        (m_report.cr1 - l_report.cr1) * 100.0
    ))
}

fn serialization() -> Outcome {
    let space = HyperParamSpace::default();
    let mut r = rng::seeded(77);
    let mut specs: Vec<ModelSpec> = Vec::new();
    let mut seed = 0u64;
    while specs.len() < 45 {
        let spec = sample_architecture(&space, 5000 + seed, r.random_range(2..=64));
        seed += 1;
        if spec.validate().is_ok() {
            specs.push(spec.into());
        }
    }
    for i in 0..5 {
        let mut lenet = LeNetSpec::baseline(r.random_range(2..=64));
        lenet.hidden_units = 16 << i;
        specs.push(lenet.into());
    }
    for (i, spec) in specs.iter().enumerate() {
        let net = Network::<f32>::build(spec.clone(), i as u64).map_err(|e| format!("spec {i}: {e}"))?;
        let bytes = to_bytes(&net);
        let stored = count_params(spec).footprint_bytes() as usize;
        ensure(bytes.len() >= stored && bytes.len() <= stored + 64 * 1024, || {
            format!("spec {i}: {} bytes for {stored} parameter bytes", bytes.len())
        })?;
        let back = from_bytes(&bytes).map_err(|e| format!("spec {i}: {e}"))?;
        ensure(back.spec() == net.spec(), || format!("spec {i}: spec changed"))?;
        let same = back
            .snapshot()
            .iter()
            .flatten()
            .zip(net.snapshot().iter().flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("spec {i}: parameters differ"))?;
        ensure(to_bytes(&back) == bytes, || format!("spec {i}: re-encoding differs"))?;
    }

    let net = Network::<f32>::build(compact_spec(7), 1).map_err(|e| e.to_string())?;
    let bytes = to_bytes(&net);
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    ensure(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic(_))), || "bad magic accepted".into())?;
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    ensure(matches!(from_bytes(&bad), Err(CheckpointError::UnsupportedVersion(99))), || {
        "future version accepted".into()
    })?;
    ensure(matches!(from_bytes(&bytes[..bytes.len() / 2]), Err(CheckpointError::Truncated(_))), || {
        "truncated file accepted".into()
    })?;
    let mut bad = bytes.clone();
    bad.push(0);
    ensure(matches!(from_bytes(&bad), Err(CheckpointError::TrailingBytes(1))), || {
        "trailing bytes accepted".into()
    })?;
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut bad = bytes.clone();
    bad[12] = b'!';
    ensure(matches!(from_bytes(&bad), Err(CheckpointError::BadSpec(_))), || "garbled spec accepted".into())?;
    let other = ModelSpec::from(compact_spec(8)).to_json();
    let mut swapped = bytes[..8].to_vec();
    swapped.extend_from_slice(&(other.len() as u32).to_le_bytes());
    swapped.extend_from_slice(other.as_bytes());
    swapped.extend_from_slice(&bytes[12 + json_len..]);
    ensure(matches!(from_bytes(&swapped), Err(CheckpointError::ShapeMismatch { .. })), || {
        "mismatched tensor shape accepted".into()
    })?;
    Ok(format!("{} specs round-trip bit-exactly; 6 corruptions rejected", specs.len()))
}

fn latency() -> Outcome {
    let net = Network::<f32>::build(ArchitectureSpec::type1(30_000), 0).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(5);
    let x = Tensor::from_vec(net.input_shape(1), (0..48 * 48).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    net.forward(&x).map_err(|e| e.to_string())?;
    let mut times: Vec<f64> = (0..15)
        .map(|_| {
            let start = Instant::now();
            net.forward(&x).unwrap();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    ensure(median < 100.0, || format!("median {median:.1} ms"))?;
    Ok(format!("median {median:.1} ms, best {:.1} ms over 15 runs", times[0]))
}

fn determinism() -> Outcome {
    let space = HyperParamSpace::default();
    let samples = |seed| serde_json::to_string(&sample_architecture(&space, seed, 50)).unwrap();
    ensure((0..200).all(|s| samples(s) == samples(s)), || "sampling differs".into())?;

    let split = generate_glyphs(&GlyphInventory::new(10, 12, 4));
    let again = generate_glyphs(&GlyphInventory::new(10, 12, 4));
    ensure(split.train.images() == again.train.images(), || "glyph generation differs".into())?;

    let cfg = TrainConfig {
        augmentation: Some(ElasticParams::default()),
        ..config(2, 9)
    };
    let run = || -> Result<(Vec<u8>, String), String> {
        let mut net = Network::build(compact_spec(10), 9).map_err(|e| e.to_string())?;
        let out = train(&mut net, &split.train, &split.test, &cfg).map_err(|e| e.to_string())?;
        let report = evaluate(&net, &split.test).map_err(|e| e.to_string())?;
        // wall-clock time is the one field allowed to vary
        let curve: Vec<_> = out
            .metrics
            .iter()
            .map(|m| (m.epoch, m.train_loss.to_bits(), m.holdout_top1.to_bits()))
            .collect();
        let artifacts = format!("{}{curve:?}{}", serde_json::to_string(&report).unwrap(), out.best_epoch);
        Ok((to_bytes(&net), artifacts))
    };
    let (a, b) = (run()?, run()?);
    ensure(a.0 == b.0, || "checkpoints differ".into())?;
    ensure(a.1 == b.1, || "reports differ".into())?;
    Ok(format!("200 samples, glyph set, and a 2-epoch augmented run ({} byte checkpoint) reproduce bit-for-bit", a.0.len()))
}
