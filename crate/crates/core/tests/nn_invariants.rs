mod common;

use gridbid::grid::{GridTopology, NormalizedAdjacency};
use gridbid::nn::{
    grad_check, random_graph, random_network_check, random_tensor, Activation, DenseLayer,
    GcnLayer, InitScheme, NetKind, Network, NetworkShape, Tensor2,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn default_shape() -> NetworkShape {
    NetworkShape {
        in_features: 6,
        gcn_widths: vec![16, 16],
        head_widths: vec![15, 10],
        outputs: 1,
    }
}

fn case(name: &str) -> GridTopology {
    GridTopology::load_case(common::data_path(name)).unwrap()
}

#[test]
fn same_parameters_run_on_30_and_39_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::init(&default_shape(), InitScheme::FanIn, &mut rng);
    let before = net.flat_params();
    let shapes: Vec<_> = net.gcn_layers.iter().map(|l| l.weights.shape()).collect();

    for (topo, n) in [
        (case("data/ieee30.case"), 30),
        (case("data/ieee39.case"), 39),
    ] {
        let adj = topo.normalized_adjacency();
        let x = random_tensor(n, 6, &mut rng);
        let out = net.forward(&x, &adj).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_finite());
    }
    assert_eq!(net.flat_params(), before);
    assert_eq!(shapes, vec![(6, 16), (16, 16)]);
}

#[test]
fn pooled_output_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(2..=30);
        let adj = random_graph(n, 0.3, &mut rng);
        let x = random_tensor(n, 6, &mut rng);
        let net = Network::init(&default_shape(), InitScheme::FanIn, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let px = Tensor2::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>());
        let a = net.forward(&x, &adj).unwrap()[0];
        let b = net.forward(&px, &adj.permuted(&perm)).unwrap()[0];
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn gcn_with_identity_adjacency_is_a_shared_dense_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 7;
    let x = random_tensor(n, 4, &mut rng);
    let w = random_tensor(4, 3, &mut rng);
    let layer = GcnLayer {
        weights: w.clone(),
        activation: Activation::Identity,
    };
    let out = layer
        .forward(&x, &NormalizedAdjacency::identity(n))
        .unwrap();
    for i in 0..n {
        for j in 0..3 {
            let expected: f64 = (0..4).map(|k| x.get(i, k) * w.get(k, j)).sum();
            assert_eq!(out.get(i, j), expected);
        }
    }
}

#[test]
fn hand_computed_forward() {
    // Two buses joined by one line: S = [[1/2, 1/2], [1/2, 1/2]].
    let topo = GridTopology::new(2, [gridbid::grid::Line::new(0, 1).unwrap()], []).unwrap();
    let adj = topo.normalized_adjacency();
    let net = Network {
        gcn_layers: vec![GcnLayer {
            weights: Tensor2::from_rows(&[vec![1.0, -1.0]]),
            activation: Activation::Relu,
        }],
        head_layers: vec![DenseLayer {
            weights: Tensor2::from_rows(&[vec![2.0], vec![3.0]]),
            bias: vec![0.5],
            activation: Activation::Identity,
        }],
    };
    // S·x = [2, 2]; ReLU([2, -2]) = [2, 0] on both rows; pool [2, 0]; 2·2 + 0.5.
    let x = Tensor2::from_rows(&[vec![1.0], vec![3.0]]);
    assert!((net.forward(&x, &adj).unwrap()[0] - 4.5).abs() < 1e-12);
    // S·x = [-1, -1]; ReLU gives [0, 1]; 3·1 + 0.5.
    let x = Tensor2::from_rows(&[vec![-1.0], vec![-1.0]]);
    assert!((net.forward(&x, &adj).unwrap()[0] - 3.5).abs() < 1e-12);
}

#[test]
fn random_nets_pass_the_gradient_check() {
    for seed in 0..20 {
        for kind in [NetKind::Dense, NetKind::Gcn] {
            let err = random_network_check(kind, seed).unwrap();
            assert!(err < 1e-4, "{kind:?} seed {seed}: {err}");
        }
        let err = random_network_check(NetKind::Linear, seed).unwrap();
        assert!(err < 1e-8, "linear seed {seed}: {err}");
    }
}

#[test]
fn gradient_check_on_the_30_bus_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let adj = case("data/ieee30.case").normalized_adjacency();
    let mut net = Network::init(&default_shape(), InitScheme::FanIn, &mut rng);
    for layer in &mut net.head_layers {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x = loop {
        let x = random_tensor(30, 6, &mut rng);
        let (_, cache) = net.forward_cached(&x, &adj).unwrap();
        if cache.relu_margin(&net) > gridbid::nn::KINK_MARGIN {
            break x;
        }
    };
    let err = grad_check(&net, &x, &adj, |o: &[f64]| (o[0] * o[0], vec![2.0 * o[0]])).unwrap();
    assert!(err < 1e-4, "{err}");
}
