//! The class-weighted Brier score, including the reference values for
//! uniform and perfect forecasts.

use bayes_fusion::dists::Discrete;
use bayes_fusion::eval::weighted_brier;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = 4;
    let names: Vec<String> = ["walk", "sit", "stand", "lie"].map(String::from).to_vec();
    let targets: Vec<Discrete> = (0..c).map(|k| Discrete::point_mass(c, k)).collect();
    let uniform = vec![Discrete::uniform(c); c];
    println!(
        "uniform forecast: {}",
        weighted_brier(&uniform, &targets, &[1.0; 4])?.brier
    );
    println!(
        "perfect forecast: {}",
        weighted_brier(&targets, &targets, &[1.0; 4])?.brier
    );

    let confident = vec![
        Discrete::new(vec![0.7, 0.1, 0.1, 0.1])?,
        Discrete::new(vec![0.2, 0.6, 0.1, 0.1])?,
        Discrete::new(vec![0.1, 0.5, 0.3, 0.1])?,
        Discrete::new(vec![0.0, 0.0, 0.1, 0.9])?,
    ];
    // rarer classes can be made to count more
    let report = weighted_brier(&confident, &targets, &[1.0, 1.0, 2.0, 1.0])?;
    print!("{}", report.table(&names));
    Ok(())
}
