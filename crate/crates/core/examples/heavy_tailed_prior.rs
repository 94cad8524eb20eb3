//! The heavy-tailed weight prior adapts to each feature's scale, so a
//! rescaled column leaves the decisions alone. The Gaussian prior does not.

use bayes_fusion::data::{generate_synthetic, SourceBatch, SynthConfig};
use bayes_fusion::models::{predict, train, EngineOptions, ModelSpec, PriorKind};

fn decisions(spec: &ModelSpec, train_set: &SourceBatch, test_set: &SourceBatch) -> Vec<usize> {
    let post = train(spec, &[vec![train_set.clone()]], &EngineOptions::default()).expect("training succeeds");
    predict(&post, std::slice::from_ref(test_set))
        .expect("shapes match")
        .iter()
        .map(|p| p.class_probabilities.argmax())
        .collect()
}

fn rescaled(b: &SourceBatch, column: usize, factor: f64) -> SourceBatch {
    let mut b = b.clone();
    b.features.iter_mut().for_each(|row| row[column] *= factor);
    b
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic(5, &SynthConfig::new(400, vec![3], 3))?;
    let (tr, te) = (data.sources[0].slice(0..60), data.sources[0].slice(200..400));
    for prior in [PriorKind::Gaussian, PriorKind::HeavyTailed] {
        let spec = ModelSpec::single(3, 3).with_prior(prior);
        let base = decisions(&spec, &tr, &te);
        for factor in [1e-3, 1e3] {
            let scaled = decisions(&spec, &rescaled(&tr, 1, factor), &rescaled(&te, 1, factor));
            let same = base.iter().zip(&scaled).filter(|(a, b)| a == b).count();
            println!(
                "{prior:?}: column 1 x {factor}: {same}/{} decisions unchanged",
                base.len()
            );
        }
    }
    Ok(())
}
