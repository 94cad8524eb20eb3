//! Location gates activity: the stacked model learns a location classifier
//! and one activity classifier per location.

use bayes_fusion::data::{generate_synthetic, SourceBatch, SynthConfig};
use bayes_fusion::eval::weighted_brier;
use bayes_fusion::models::{predict, train, EngineOptions, ModelSpec, Posterior};

fn brier(post: &Posterior, test: &[SourceBatch]) -> Result<f64, Box<dyn std::error::Error>> {
    let preds: Vec<_> = predict(post, test)?
        .into_iter()
        .map(|p| p.class_probabilities)
        .collect();
    Ok(weighted_brier(&preds, test[0].targets.as_deref().unwrap_or_default(), &[1.0; 4])?.brier)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(8, &SynthConfig::stacked(600, 3, 4, [3, 3]).with_bias())?;
    let split = |r: std::ops::Range<usize>| data.sources.iter().map(|s| s.slice(r.clone())).collect::<Vec<_>>();
    let (tr, te) = (split(0..400), split(400..600));
    let dims = vec![tr[0].width(), tr[1].width()];

    let stacked = ModelSpec::stacked(3, 4, dims.clone(), vec![0], vec![1]);
    let post = train(&stacked, std::slice::from_ref(&tr), &EngineOptions::default())?;
    println!("stacked activity Brier:       {:.4}", brier(&post, &te)?);
    let first = &predict(&post, &te)?[0];
    println!("first test instance location: {:?}", first.location_probabilities);

    let flat = ModelSpec::single(4, dims[1]);
    let flat_post = train(&flat, &[vec![tr[1].clone()]], &EngineOptions::default())?;
    println!("activity-only BPM Brier:      {:.4}", brier(&flat_post, &te[1..])?);
    Ok(())
}
