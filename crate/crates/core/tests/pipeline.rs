use lowrank_core::compressor::{compress_model, load_model, probe_batch, save_model, size_ratio, ToyDims, ToyModel};
use lowrank_core::embeddings::{Activation, EmbeddingSpec, MlpEmbedding};
use lowrank_core::Rng;

fn model(seed: u64) -> ToyModel {
    let mut rng = Rng::new(seed);
    let emb = EmbeddingSpec::Mlp(MlpEmbedding::random(2, 16, 8, Activation::Tanh, &mut rng).unwrap());
    ToyModel::dense(emb, &ToyDims { d: 16, layers: 4, heads: 2, depth: 4 }, &mut rng).unwrap()
}

#[test]
fn compressed_model_survives_disk() {
    let m = model(5);
    let (small, _) = compress_model(&m, 0.3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("compressed.json");
    save_model(&small, &path).unwrap();
    let back = load_model(&path).unwrap();
    let probes = probe_batch(2);
    let a = small.forward_batch(&probes).unwrap();
    let b = back.forward_batch(&probes).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn looser_tolerance_never_grows_the_model() {
    let m = model(6);
    let mut last = f64::INFINITY;
    for eps in [1e-6, 1e-3, 0.05, 0.2, 0.5, 0.9] {
        let (c, _) = compress_model(&m, eps).unwrap();
        let ratio = size_ratio(&c, &m).unwrap();
        assert!(ratio <= last + 1e-12, "eps {eps}: ratio {ratio} > {last}");
        last = ratio;
    }
    assert!(last < 1.0);
}

#[test]
fn output_drift_shrinks_with_tolerance() {
    let m = model(7);
    let probes = probe_batch(2);
    let base = m.forward_batch(&probes).unwrap();
    let drift = |eps: f64| {
        let (c, _) = compress_model(&m, eps).unwrap();
        let out = c.forward_batch(&probes).unwrap();
        base.iter().zip(&out).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    assert!(drift(1e-9) <= 1e-6);
    assert!(drift(1e-9) <= drift(0.5));
}
