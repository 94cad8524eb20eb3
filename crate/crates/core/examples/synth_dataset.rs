//! Generate a synthetic dataset with known ground truth and write it in the
//! on-disk format the command line reads.

use bayes_fusion::data::{
    generate_synthetic, read_matrix_dataset, write_matrix_dataset, Manifest, SynthConfig, SynthMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig::new(100, vec![2, 3], 3)
        .with_informative(vec![0])
        .with_mode(SynthMode::Additive);
    let data = generate_synthetic(42, &cfg)?;
    for (s, w) in data.truth.weights.iter().enumerate() {
        println!("source {s} true weights {w:?}");
    }
    let dir = std::env::temp_dir().join("bayes-fusion-synth-example");
    write_matrix_dataset(&dir, &Manifest::generic(&data.sources, 3, 0), &data.sources)?;
    let (manifest, back) = read_matrix_dataset(&dir)?;
    println!(
        "wrote {} sources to {} and read them back unchanged: {}",
        manifest.sources.len(),
        dir.display(),
        back == data.sources
    );
    Ok(())
}
