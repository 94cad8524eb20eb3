//! A multi-class Bayes point machine trained with EP (argmax link) and with
//! VMP (softmax link) on the same synthetic problem.

use bayes_fusion::data::{generate_synthetic, SynthConfig};
use bayes_fusion::eval::weighted_brier;
use bayes_fusion::models::{predict, train, EngineOptions, Link, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(11, &SynthConfig::new(600, vec![4], 3).with_bias())?;
    let n = data.sources[0].len();
    let (train_set, test_set) = (data.sources[0].slice(0..400), data.sources[0].slice(400..n));
    let targets = test_set.targets.clone().unwrap_or_default();

    for link in [Link::Argmax, Link::Softmax] {
        let spec = ModelSpec::single(3, train_set.width()).with_link(link);
        let post = train(&spec, &[vec![train_set.clone()]], &EngineOptions::default())?;
        let preds: Vec<_> = predict(&post, std::slice::from_ref(&test_set))?
            .into_iter()
            .map(|p| p.class_probabilities)
            .collect();
        let report = weighted_brier(&preds, &targets, &[1.0; 3])?;
        println!(
            "{link:?}: held-out Brier {:.4}, log evidence {:.2} ({:?}, {} iterations)",
            report.brier, post.metadata.log_evidence, post.metadata.engine, post.metadata.iterations
        );
        let w = &post.blocks[0];
        for c in 0..w.classes - 1 {
            let means: Vec<String> = (0..w.features).map(|d| format!("{:+.2}", w.moments(c, d).0)).collect();
            println!("  class {c} weights [{}]", means.join(", "));
        }
    }
    Ok(())
}
