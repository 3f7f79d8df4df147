//! Baseline vs trained test accuracy on a synthetic dataset.
//!
//! Usage: `cargo run --release --example synth_bench -- [synth.toml] [key=value ...]`

use std::time::Instant;

use hapm_core::gating::DEFAULT_N_DIV;
use hapm_core::metrics::evaluate;
use hapm_core::pipeline::{enhanced_prototypes, prepare};
use hapm_core::synth::{generate, SynthConfig};
use hapm_core::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut text = String::new();
    for arg in std::env::args().skip(1) {
        if arg.contains('=') {
            text.push_str(&arg);
        } else {
            text.push_str(&std::fs::read_to_string(&arg)?);
        }
        text.push('\n');
    }
    let cfg = SynthConfig::parse(&text)?;
    let start = Instant::now();
    let data = generate(&cfg)?;
    let prep = prepare(&data.train, &data.library, 5, DEFAULT_N_DIV)?;
    let baseline = evaluate(&data.test, &prep.base)?.accuracy;
    let (params, report) = train(&data.train, &data.val, &prep.base, &prep.features, &TrainConfig::default())?;
    let enhanced = enhanced_prototypes(&prep.base, &prep.features, &params)?;
    let trained = evaluate(&data.test, &enhanced)?.accuracy;
    if std::env::var("BENCH_DEBUG").is_ok() {
        let means: Vec<_> = hapm_core::GradeId::all()
            .map(|g| {
                let rs: Vec<_> = data.train.of_grade(g).collect();
                rs.iter().fold(ndarray::Array2::<f64>::zeros(rs[0].tokens.raw_dim()), |a, r| a + &r.tokens) / rs.len() as f64
            })
            .collect();
        let mean_protos = hapm_core::PrototypeSet::new(hapm_core::Stage::Base, means)?;
        println!("class-mean prototypes: {:.3}", evaluate(&data.test, &mean_protos)?.accuracy);
        println!("base confusion\n{:?}", evaluate(&data.test, &prep.base)?.confusion);
        println!("trained confusion\n{:?}", evaluate(&data.test, &enhanced)?.confusion);
        for (g, (b, e)) in prep.base.matrices().iter().zip(enhanced.matrices()).enumerate() {
            let d = e - b;
            println!("grade {g} shift row0 {:.3}", d.row(0));
        }
    }
    println!(
        "baseline {baseline:.3} trained {trained:.3} gain {:+.3} best_epoch {} val_loss {:.5} -> {:.5} ({:.1}s)",
        trained - baseline,
        report.best_epoch,
        report.initial_val_loss,
        report.best_val_loss,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
