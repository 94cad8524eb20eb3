//! Bayes factors between additive and switching fusion, on data drawn from
//! each. The evidence of the generating architecture should win.

use bayes_fusion::data::{generate_synthetic, SynthConfig, SynthMode};
use bayes_fusion::eval::{bayes_factor, Evidence};
use bayes_fusion::models::{train, Architecture, EngineOptions, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for mode in [SynthMode::Additive, SynthMode::Switching] {
        let data = generate_synthetic(3, &SynthConfig::new(500, vec![3, 3], 3).with_mode(mode.clone()))?;
        let evidence = |arch| -> Result<Evidence, Box<dyn std::error::Error>> {
            let post = train(
                &ModelSpec::new(arch, 3, vec![3, 3]),
                std::slice::from_ref(&data.sources),
                &EngineOptions::default(),
            )?;
            Ok(Evidence::of(&post))
        };
        let additive = evidence(Architecture::FusedAdditive)?;
        let switching = evidence(Architecture::FusedSwitching)?;
        let log_bf = bayes_factor(additive, switching, 0.0)?;
        println!(
            "{mode:?} data: log p(D|additive) {:.2}, log p(D|switching) {:.2}, log BF {log_bf:+.2}",
            additive.log_evidence, switching.log_evidence
        );
    }
    Ok(())
}
