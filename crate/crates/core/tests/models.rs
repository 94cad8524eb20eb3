use bayes_fusion::data::{generate_synthetic, SourceBatch, SynthConfig, SynthMode};
use bayes_fusion::dists::{Discrete, Gaussian1D};
use bayes_fusion::graph::{run_ep, EpOptions, FactorGraph, FactorKind, VarKind};
use bayes_fusion::models::{
    adf_update, build, predict, source_relevance, train, Architecture, EngineOptions, ModelSpec, Posterior, PriorKind,
    SourceRelevance,
};

fn options() -> EngineOptions {
    EngineOptions {
        fail_on_elbo_decrease: false,
        ..EngineOptions::default()
    }
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

fn decisions(post: &Posterior, batch: &[SourceBatch]) -> Vec<usize> {
    predict(post, batch)
        .unwrap()
        .iter()
        .map(|p| argmax(p.class_probabilities.probabilities()))
        .collect()
}

fn split(sources: &[SourceBatch], at: usize) -> (Vec<SourceBatch>, Vec<SourceBatch>) {
    let n = sources[0].len();
    (
        sources.iter().map(|s| s.slice(0..at)).collect(),
        sources.iter().map(|s| s.slice(at..n)).collect(),
    )
}

#[test]
fn separable_points_are_all_classified() {
    let rows = vec![
        vec![2.0, 1.0],
        vec![1.5, 2.0],
        vec![3.0, 0.5],
        vec![2.5, 2.5],
        vec![-2.0, -1.0],
        vec![-1.0, -2.5],
        vec![-3.0, -0.5],
        vec![-2.0, -2.0],
    ];
    let labels = [0, 0, 0, 0, 1, 1, 1, 1];
    let targets = labels.iter().map(|&y| Discrete::point_mass(2, y)).collect();
    let batch = vec![SourceBatch::from_rows("x", rows).with_targets(targets)];
    let post = train(&ModelSpec::single(2, 2), std::slice::from_ref(&batch), &options()).unwrap();
    assert_eq!(decisions(&post, &batch), labels);
}

/// One-weight linear-Gaussian model; the conjugate core of every BPM.
fn conjugate(prior: Gaussian1D, points: &[(f64, f64)]) -> Gaussian1D {
    let mut g = FactorGraph::new();
    let w = g.add_variable("w", VarKind::Gaussian);
    g.add_factor(FactorKind::GaussianPrior { var: w, prior }).unwrap();
    for (i, &(x, y)) in points.iter().enumerate() {
        let s = g.add_variable(format!("s{i}"), VarKind::Gaussian);
        let o = g.add_variable(format!("o{i}"), VarKind::Gaussian);
        g.add_factor(FactorKind::LinearScore {
            output: s,
            inputs: vec![w],
            coefficients: vec![x],
        })
        .unwrap();
        g.add_factor(FactorKind::GaussianNoise {
            input: s,
            output: o,
            precision: 1.0,
        })
        .unwrap();
        g.observe(o, y).unwrap();
    }
    let opts = EpOptions {
        damping: 1.0,
        tol: 1e-14,
        max_iters: 50,
    };
    run_ep(&g, &g.default_schedule(), &opts).unwrap().gaussian(w)
}

#[test]
fn conjugate_batches_compose() {
    let points: Vec<(f64, f64)> = (0..12)
        .map(|i| (0.3 * i as f64 - 1.5, (i % 5) as f64 * 0.4 - 0.8))
        .collect();
    let prior = Gaussian1D::from_mean_precision(0.0, 1.0);
    let whole = conjugate(prior, &points);
    let halves = conjugate(conjugate(prior, &points[..5]), &points[5..]);
    assert!(whole.max_abs_diff(&halves) < 1e-8, "{whole:?} vs {halves:?}");
}

#[test]
fn empty_adf_update_is_a_no_op() {
    let spec = ModelSpec::single(3, 2);
    let data = generate_synthetic(1, &SynthConfig::new(20, vec![2], 3)).unwrap();
    let post = train(&spec, std::slice::from_ref(&data.sources), &options()).unwrap();
    let empty: Vec<SourceBatch> = data.sources.iter().map(|s| s.slice(0..0)).collect();
    let after = adf_update(&post, &empty, &options()).unwrap();
    assert_eq!(after.blocks, post.blocks);
}

#[test]
fn sequential_evidence_tracks_the_batch_evidence() {
    let spec = ModelSpec::single(3, 3);
    let data = generate_synthetic(2, &SynthConfig::new(50, vec![3], 3)).unwrap();
    let batch = train(&spec, std::slice::from_ref(&data.sources), &options()).unwrap();
    let mut online = Posterior::prior(&spec).unwrap();
    for i in 0..50 {
        let point: Vec<SourceBatch> = data.sources.iter().map(|s| s.slice(i..i + 1)).collect();
        online = adf_update(&online, &point, &options()).unwrap();
    }
    assert_eq!(online.metadata.instances_seen, 50);
    let (a, b) = (online.metadata.log_evidence, batch.metadata.log_evidence);
    assert!(((a - b) / b).abs() < 0.1, "online {a} vs batch {b}");
}

#[test]
fn instance_order_does_not_matter() {
    let spec = ModelSpec::single(3, 2);
    let data = generate_synthetic(3, &SynthConfig::new(40, vec![2], 3)).unwrap();
    let tight = EngineOptions {
        tol: 1e-10,
        max_iters: 2000,
        ..options()
    };
    let forward = train(&spec, std::slice::from_ref(&data.sources), &tight).unwrap();
    let mut reversed = data.sources[0].clone();
    reversed.features.reverse();
    reversed.timestamps.reverse();
    if let Some(t) = reversed.targets.as_mut() {
        t.reverse();
    }
    let backward = train(&spec, &[vec![reversed]], &tight).unwrap();
    assert!(forward.metadata.converged && backward.metadata.converged);
    let block = (&forward.blocks[0], &backward.blocks[0]);
    for (a, b) in block.0.weights.iter().flatten().zip(block.1.weights.iter().flatten()) {
        assert!(a.max_abs_diff(b) < 1e-6, "{a:?} vs {b:?}");
    }
}

fn concatenated(sources: &[SourceBatch]) -> SourceBatch {
    let rows = (0..sources[0].len())
        .map(|i| sources.iter().flat_map(|s| s.features[i].iter().copied()).collect())
        .collect();
    SourceBatch::from_rows("all", rows).with_targets(sources[0].targets.clone().unwrap())
}

#[test]
fn additive_fusion_agrees_with_concatenation() {
    let data = generate_synthetic(4, &SynthConfig::new(400, vec![2, 3], 3)).unwrap();
    let (tr, te) = split(&data.sources, 200);
    let additive = train(
        &ModelSpec::new(Architecture::FusedAdditive, 3, vec![2, 3]),
        std::slice::from_ref(&tr),
        &options(),
    )
    .unwrap();
    let concat = train(
        &ModelSpec::new(Architecture::ConcatBpm, 3, vec![5]),
        &[vec![concatenated(&tr)]],
        &options(),
    )
    .unwrap();
    let a = decisions(&additive, &te);
    let c = decisions(&concat, &[concatenated(&te)]);
    let agree = a.iter().zip(&c).filter(|(x, y)| x == y).count();
    assert!(agree >= 190, "{agree}/200");
}

#[test]
fn switching_gives_the_noise_source_least_weight() {
    let cfg = SynthConfig::new(200, vec![3, 3, 3], 3)
        .with_informative(vec![0, 1])
        .with_mode(SynthMode::Switching);
    let data = generate_synthetic(5, &cfg).unwrap();
    let post = train(
        &ModelSpec::new(Architecture::FusedSwitching, 3, vec![3, 3, 3]),
        &[data.sources],
        &options(),
    )
    .unwrap();
    let theta = source_relevance(&post).unwrap().scores();
    assert_eq!(
        theta
            .iter()
            .enumerate()
            .fold(0, |m, (i, v)| if *v < theta[m] { i } else { m }),
        2,
        "{theta:?}"
    );
}

#[test]
fn untrained_weighted_model_keeps_the_beta_prior() {
    let spec = ModelSpec::new(Architecture::FusedWeighted, 3, vec![2, 2, 2]);
    let post = Posterior::prior(&spec).unwrap();
    match source_relevance(&post).unwrap() {
        SourceRelevance::Weighted(beta) => assert_eq!(beta, vec![(1.0, 1.0); 3]),
        other => panic!("{other:?}"),
    }
    assert_eq!(build(&spec).unwrap().source_weights.len(), 3);
}

#[test]
fn heavy_tailed_decisions_survive_per_feature_rescaling() {
    let data = generate_synthetic(6, &SynthConfig::new(300, vec![3], 3)).unwrap();
    let (tr, te) = split(&data.sources, 150);
    let spec = ModelSpec::single(3, 3).with_prior(PriorKind::HeavyTailed);
    let base = decisions(&train(&spec, std::slice::from_ref(&tr), &options()).unwrap(), &te);
    let scales = [0.01, 7.0, 250.0];
    let rescale = |b: &[SourceBatch]| {
        let mut b = b.to_vec();
        for row in &mut b[0].features {
            row.iter_mut().zip(scales).for_each(|(x, s)| *x *= s);
        }
        b
    };
    let scaled = decisions(&train(&spec, &[rescale(&tr)], &options()).unwrap(), &rescale(&te));
    assert_eq!(base, scaled);
}

#[test]
fn posterior_round_trips_through_json() {
    let data = generate_synthetic(7, &SynthConfig::new(30, vec![2, 2], 3)).unwrap();
    let spec = ModelSpec::new(Architecture::FusedWeighted, 3, vec![2, 2]);
    let post = train(&spec, std::slice::from_ref(&data.sources), &options()).unwrap();
    let back = Posterior::from_json(&post.to_json().unwrap()).unwrap();
    assert_eq!(back, post);
    assert_eq!(
        predict(&back, &data.sources).unwrap(),
        predict(&post, &data.sources).unwrap()
    );
}
