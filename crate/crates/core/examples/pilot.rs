//! Full experiment with the default configuration: pretrain, build
//! preferences, align, then compare the aligned model with the reference,
//! and repeat alignment without temporal-order pairs.
//!
//! Usage: `cargo run --release -p prefdiff --example pilot [key=value ...]`

use std::time::Instant;

use prefdiff::config::RunConfig;
use prefdiff::pipeline;
use prefdiff::preference::StrategyTag;

fn main() -> prefdiff::Result<()> {
    env_logger::init();
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| prefdiff::Error::Argument(format!("expected key=value, got {arg}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let t0 = Instant::now();
    let pre = pipeline::pretrain(&cfg)?;
    println!("pretrain: {:.1}s heldout curve {:?}", t0.elapsed().as_secs_f64(), pre.curve.heldout);
    let t = Instant::now();
    let ds = pipeline::build_prefs(&cfg, &pre.model)?;
    println!("prefs: {:.1}s\n{}{:?}", t.elapsed().as_secs_f64(), ds.report.to_table(), ds.report.thresholds);
    let (train, held) = pipeline::split_pairs(&cfg, &ds.pairs);
    println!("split: {} train / {} held out", train.len(), held.len());
    let t = Instant::now();
    let full = pipeline::align(&cfg, &pre.model, &train)?;
    let dpo_rows: Vec<_> = full.log.rows.iter().filter(|r| r.phase == prefdiff::trainer::Phase::Dpo).collect();
    let tail = &dpo_rows[dpo_rows.len().saturating_sub(5)..];
    println!(
        "align: {:.1}s; dpo loss first {:.4} last {:?}",
        t.elapsed().as_secs_f64(),
        dpo_rows.first().map(|r| r.loss).unwrap_or(f64::NAN),
        tail.iter().map(|r| (r.loss, r.margin)).collect::<Vec<_>>()
    );
    let t = Instant::now();
    let reference = pipeline::evaluate(&cfg, &pre.model, None)?;
    let sft = pipeline::evaluate(&cfg, &full.sft, None)?;
    let aligned = pipeline::evaluate(&cfg, &full.policy, Some((&pre.model, held.as_slice())))?;
    println!("eval: {:.1}s", t.elapsed().as_secs_f64());
    println!("reference\n{}", reference.to_table());
    println!("sft\n{}", sft.to_table());
    println!("dpo\n{}", aligned.to_table());
    let no_s3 = pipeline::only_strategies(&train, &[StrategyTag::S11, StrategyTag::S12, StrategyTag::S2]);
    let ablated = pipeline::align(&cfg, &pre.model, &no_s3)?;
    let ablated_eval = pipeline::evaluate(&cfg, &ablated.policy, None)?;
    println!("dpo without S3 ({} pairs)\n{}", no_s3.len(), ablated_eval.to_table());
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
