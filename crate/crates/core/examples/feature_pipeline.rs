//! Context windows, pairwise products, standardisation and a bias column,
//! fitted on training data and saved as JSON for reuse at prediction time.

use bayes_fusion::data::SourceBatch;
use bayes_fusion::features::{FeaturePipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0], vec![4.0, 1.0]];
    let batch = SourceBatch::from_rows("accel", rows);
    let config = PipelineConfig {
        context_radius: 1,
        standardize: true,
        poly2: true,
        bias: true,
    };
    let pipeline = FeaturePipeline::fit(config, std::slice::from_ref(&batch))?;
    let out = &pipeline.transform(&[batch])?[0];
    println!("{} features: {}", out.width(), out.feature_names.join(" "));
    for row in &out.features {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.2}")).collect();
        println!("{}", cells.join(" "));
    }
    let saved = pipeline.to_json()?;
    let restored = FeaturePipeline::from_json(&saved)?;
    println!("restored pipeline output dims {:?}", restored.output_dims());
    Ok(())
}
