//! EP on a hand-built factor graph: a Gaussian weight observed through
//! noisy linear measurements. The model is conjugate, so the answer is exact.

use bayes_fusion::dists::Gaussian1D;
use bayes_fusion::graph::{run_ep, EpOptions, FactorGraph, FactorKind, VarKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let points = [(1.0, 0.9), (-0.5, -0.6), (2.0, 1.5), (0.3, 0.4)];
    let mut g = FactorGraph::new();
    let w = g.add_variable("w", VarKind::Gaussian);
    g.add_factor(FactorKind::GaussianPrior {
        var: w,
        prior: Gaussian1D::from_mean_precision(0.0, 1.0),
    })?;
    for (i, (x, y)) in points.iter().enumerate() {
        let s = g.add_variable(format!("s{i}"), VarKind::Gaussian);
        let o = g.add_variable(format!("y{i}"), VarKind::Gaussian);
        g.add_factor(FactorKind::LinearScore {
            output: s,
            inputs: vec![w],
            coefficients: vec![*x],
        })?;
        g.add_factor(FactorKind::GaussianNoise {
            input: s,
            output: o,
            precision: 4.0,
        })?;
        g.observe(o, *y)?;
    }
    let result = run_ep(&g, &g.default_schedule(), &EpOptions::default())?;
    let post = result.gaussian(w);

    // closed form: precision 1 + 4 sum x^2, mean 4 sum xy / precision
    let precision = 1.0 + 4.0 * points.iter().map(|(x, _)| x * x).sum::<f64>();
    let mean = 4.0 * points.iter().map(|(x, y)| x * y).sum::<f64>() / precision;
    println!("EP:          mean {:.6}  variance {:.6}", post.mean(), post.variance());
    println!("closed form: mean {mean:.6}  variance {:.6}", 1.0 / precision);
    println!(
        "log evidence {:.4} after {} sweeps",
        result.log_evidence, result.iterations
    );
    Ok(())
}
