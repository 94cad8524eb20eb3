//! Assumed density filtering: the posterior after each mini-batch becomes
//! the prior for the next, and the held-out score improves as data arrives.

use bayes_fusion::data::{generate_synthetic, SynthConfig};
use bayes_fusion::eval::weighted_brier;
use bayes_fusion::models::{adf_update, predict, train, EngineOptions, ModelSpec, Posterior};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(9, &SynthConfig::new(700, vec![3], 3).with_bias())?;
    let stream = data.sources[0].slice(0..500);
    let test = data.sources[0].slice(500..700);
    let targets = test.targets.clone().unwrap_or_default();
    let spec = ModelSpec::single(3, stream.width());
    let options = EngineOptions::default();

    let mut post = Posterior::prior(&spec)?;
    for start in (0..500).step_by(50) {
        post = adf_update(&post, &[stream.slice(start..start + 50)], &options)?;
        let preds: Vec<_> = predict(&post, std::slice::from_ref(&test))?
            .into_iter()
            .map(|p| p.class_probabilities)
            .collect();
        println!(
            "{:>3} seen: held-out Brier {:.4}",
            post.metadata.instances_seen,
            weighted_brier(&preds, &targets, &[1.0; 3])?.brier
        );
    }
    let batch = train(&spec, &[vec![stream]], &options)?;
    println!(
        "log evidence: online {:.2}, batch {:.2}",
        post.metadata.log_evidence, batch.metadata.log_evidence
    );
    Ok(())
}
