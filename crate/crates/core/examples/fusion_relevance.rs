//! Three fusion architectures on data where only one of three sources
//! carries signal. The weighted and switching models say which one.

use bayes_fusion::data::{generate_synthetic, SynthConfig};
use bayes_fusion::models::{source_relevance, train, Architecture, EngineOptions, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig::new(500, vec![3, 3, 3], 3).with_informative(vec![2]);
    let data = generate_synthetic(21, &cfg)?;
    println!("source 2 is the informative one");
    for arch in [
        Architecture::FusedAdditive,
        Architecture::FusedWeighted,
        Architecture::FusedSwitching,
    ] {
        let spec = ModelSpec::new(arch, 3, vec![3, 3, 3]);
        let post = train(&spec, std::slice::from_ref(&data.sources), &EngineOptions::default())?;
        let relevance = source_relevance(&post)?;
        let scores: Vec<String> = relevance.scores().iter().map(|s| format!("{s:.3}")).collect();
        println!("{arch:>16}: [{}]  {relevance:?}", scores.join(", "));
    }
    Ok(())
}
