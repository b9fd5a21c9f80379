mod common;

use fewshot::nn::{load_checkpoint, save_checkpoint, EmbeddingNetwork, NetworkConfig, OptimizerState};
use fewshot::Rng;
use proptest::prelude::*;

#[test]
fn backbone_gradients_match_finite_differences() {
    for seed in 0..4 {
        let err = common::triplet_backbone_fd_error(seed);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn learning_rate_schedule() {
    let opt = OptimizerState::for_params(&[]);
    assert_eq!(opt.lr_at(0), 1e-3);
    assert!((opt.lr_at(1000) - 9e-4).abs() < 1e-18);
    assert!((1..5000).step_by(7).all(|s| opt.lr_at(s) < opt.lr_at(s - 1)));
}

#[test]
fn checkpoint_file_roundtrip_gives_identical_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig { input_size: (16, 16), conv_filters: vec![4, 8], embedding_dim: 6 };
    let net = EmbeddingNetwork::new(cfg, &mut Rng::new(2)).unwrap();
    let opt = OptimizerState::for_params(net.params());
    let path = dir.path().join("n.memb");
    save_checkpoint(&net, &opt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let imgs = common::random_images(5, 16, 16, &mut Rng::new(3));
    let (a, b) = (net.embed(&imgs).unwrap(), back.network.embed(&imgs).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = Rng::new(seed);
        let cfg = common::small_config(&mut rng);
        let side = cfg.input_size.0;
        let net = EmbeddingNetwork::new(cfg, &mut rng).unwrap();
        let imgs = common::random_images(n, side, side, &mut rng);
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let permuted: Vec<_> = order.iter().map(|&i| imgs[i].clone()).collect();
        let (e, p) = (net.embed(&imgs).unwrap(), net.embed(&permuted).unwrap());
        for (row, &i) in order.iter().enumerate() {
            prop_assert_eq!(p.row(row), e.row(i));
        }
    }
}
