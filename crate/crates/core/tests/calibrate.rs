//! Manual calibration driver for the standard benchmark. Run with:
//! `cargo test --release --test calibrate -- --ignored --nocapture`

use corrgap::harness::{
    best_zero_error_threshold, false_count, run_condition, training_dataset, tune_on_stack,
    BenchmarkSpec, Criterion, Label,
};
use corrgap::preprocess::Condition;
use corrgap::trainer::{self, make_batch, permute_batch, evaluate_pairs};
use corrgap::convnet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
#[ignore]
fn calibrate_benchmark() {
    let iters: u32 = std::env::var("CAL_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(80);
    let mut spec = BenchmarkSpec::standard(2024);
    spec.train.max_iters = iters;

    let t0 = Instant::now();
    let eval_stack = corrgap::harness::generate_stack(&spec.stack, spec.eval_sections, spec.eval_seed).unwrap();
    let train_stack = corrgap::harness::generate_stack(&spec.stack, spec.train_sections, spec.train_seed).unwrap();
    println!("[{:?}] stacks generated", t0.elapsed());

    // held-out pairs from the eval stack
    let holdout_data = training_dataset(&eval_stack, spec.match_cfg.downsample_factor).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let mut holdout = Vec::new();
    for _ in 0..4 {
        holdout.extend(make_batch(&holdout_data, &spec.train, &mut rng).unwrap());
    }
    let (permuted, _) = permute_batch(&holdout, &mut rng).unwrap();

    let init_params = convnet::init(&spec.net).unwrap();
    let (rmax0_sim, rdelta0_sim) = evaluate_pairs(&init_params, &holdout, spec.train.exclusion_train).unwrap();
    let (rmax0_perm, _) = evaluate_pairs(&init_params, &permuted, spec.train.exclusion_train).unwrap();
    println!("[{:?}] init: similar r_delta {rdelta0_sim:.4} r_max {rmax0_sim:.4}; permuted r_max {rmax0_perm:.4}", t0.elapsed());

    let dataset = training_dataset(&train_stack, spec.match_cfg.downsample_factor).unwrap();
    let outcome = trainer::train(&dataset, &spec.net, &spec.train).unwrap();
    println!("[{:?}] trained {} iters", t0.elapsed(), iters);
    for rec in outcome.log.iter().step_by((iters as usize / 10).max(1)) {
        println!("  it {:4}  gap {:+.4}  dis {:+.4}  r_max {:.4}  r_delta {:.4}  gnorm {:.3}",
            rec.iteration, rec.gap_loss, rec.dissim_loss, rec.mean_r_max, rec.mean_r_delta, rec.grad_norm);
    }

    let (rmax1_sim, rdelta1_sim) = evaluate_pairs(&outcome.params, &holdout, spec.train.exclusion_train).unwrap();
    let (rmax1_perm, _) = evaluate_pairs(&outcome.params, &permuted, spec.train.exclusion_train).unwrap();
    println!("[{:?}] trained: similar r_delta {rdelta0_sim:.4} -> {rdelta1_sim:.4}; sim r_max {rmax0_sim:.4} -> {rmax1_sim:.4}; permuted r_max {rmax0_perm:.4} -> {rmax1_perm:.4}", t0.elapsed());

    // bandpass tuning per pairing kind
    let adjacent = spec.adjacent_pairs();
    let across = spec.across_pairs();
    let bp_adj = tune_on_stack(&eval_stack, &adjacent, &spec.match_cfg, &spec.bandpass_grid, 15).unwrap();
    let bp_acr = tune_on_stack(&eval_stack, &across, &spec.match_cfg, &spec.bandpass_grid, 15).unwrap();
    println!("[{:?}] tuned bandpass adjacent {bp_adj:?} across {bp_acr:?}", t0.elapsed());

    // conditions
    let mut all_records = Vec::new();
    for (kind, pairs, bp) in [("adjacent", &adjacent, bp_adj), ("across", &across, bp_acr)] {
        for condition in [
            Condition::Raw,
            Condition::Bandpass(bp),
            Condition::Convnet(outcome.params.clone()),
        ] {
            let recs = run_condition(&eval_stack, pairs, &condition, &spec.match_cfg).unwrap();
            let total = recs.len();
            let fc = false_count(&recs);
            println!("[{:?}] {kind:9} {:9}: {fc:3}/{total} false ({:.2}%)",
                t0.elapsed(), condition.name(), 100.0 * fc as f64 / total as f64);
            all_records.extend(recs);
        }
    }

    // rejection efficiency: convnet vs bandpass zero-error thresholds
    for cond in ["bandpass", "convnet"] {
        let subset: Vec<_> = all_records.iter().filter(|r| r.condition == cond).cloned().collect();
        let mut thresholds: Vec<f64> = subset.iter().map(|r| r.r_delta).collect();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        let best = best_zero_error_threshold(&subset, Criterion::RDelta, &thresholds).unwrap();
        let n_true = subset.iter().filter(|r| r.label == Label::True).count();
        println!("{cond}: zero-error threshold {best:?} (true records {n_true})");
    }
}
