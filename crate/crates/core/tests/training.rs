use vluci::math::sample_variance;
use vluci::synth::{generate, split_indices, SynthConfig};
use vluci::vluci::{VluciConfig, VluciModel};

#[test]
fn default_training_learns_a_spread_out_confounder() {
    let ds = generate(&SynthConfig { n_samples: 2000, seed: 21, ..SynthConfig::default() }).unwrap();
    let (train_idx, test_idx) = split_indices(ds.len(), 21).unwrap();
    let (train, test) = (ds.obs.select(&train_idx), ds.obs.select(&test_idx));
    let cfg = VluciConfig { seed: 21, ..VluciConfig::default() };
    let mut model = VluciModel::new(&cfg, 8).unwrap();
    let history = model.train(&train, &cfg).unwrap();
    assert_eq!(history.len(), cfg.epochs);
    let (first, last) = (history[0], *history.last().unwrap());
    assert!(last.l_rec_y < first.l_rec_y, "l_recY {} -> {}", first.l_rec_y, last.l_rec_y);
    assert!(last.total < first.total);
    let mu = model.infer_confounder(&test.x, &test.t, &test.y).unwrap();
    let v = sample_variance(&mu.col(0));
    assert!(v > 0.1, "posterior mean variance {v}");
}
