//! Central finite-difference checks against the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, InitScheme, Network, NetworkShape, NnError, Tensor2};
use crate::grid::{GridTopology, Line, NormalizedAdjacency};

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Random inputs whose ReLU pre-activations sit closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;
const MAX_REDRAWS: usize = 100;

/// Largest `|fd − bp| / max(1e-8, |fd| + |bp|)` over all entries.
pub fn relative_error(finite_diff: &[f64], analytic: &[f64]) -> f64 {
    finite_diff
        .iter()
        .zip(analytic)
        .map(|(fd, bp)| (fd - bp).abs() / (fd.abs() + bp.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares backprop against central differences (step [`GRAD_CHECK_STEP`])
/// for every parameter of `net`. `loss` maps the network output to a scalar
/// and its gradient with respect to that output.
pub fn grad_check<L>(
    net: &Network,
    features: &Tensor2,
    adj: &NormalizedAdjacency,
    loss: L,
) -> Result<f64, NnError>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (out, cache) = net.forward_cached(features, adj)?;
    let (_, out_grad) = loss(&out);
    let grads = net.backward_params(&cache, adj, &out_grad)?;
    let analytic = grads.flat();

    let base = net.flat_params();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        params[i] = base[i] + GRAD_CHECK_STEP;
        probe.set_flat_params(&params)?;
        let up = loss(&probe.forward(features, adj)?).0;
        params[i] = base[i] - GRAD_CHECK_STEP;
        probe.set_flat_params(&params)?;
        let down = loss(&probe.forward(features, adj)?).0;
        params[i] = base[i];
        fd.push((up - down) / (2.0 * GRAD_CHECK_STEP));
    }
    Ok(relative_error(&fd, &analytic))
}

/// Network family exercised by [`random_network_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// Dense layers only, on a single-row input.
    Dense,
    /// One or two graph convolutions followed by a dense head.
    Gcn,
    /// GCN and dense layers with every activation set to identity.
    Linear,
}

/// Random undirected graph on `n` nodes, each pair joined with probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> NormalizedAdjacency {
    let lines: Vec<Line> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|_| rng.random_bool(p))
        .map(|(a, b)| Line::new(a, b).expect("a < b"))
        .collect();
    GridTopology::new(n, lines, [])
        .expect("valid lines")
        .normalized_adjacency()
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Gradient check of one random network of family `kind` under a random
/// quadratic loss (linear loss for [`NetKind::Linear`]). Inputs are redrawn
/// until every ReLU pre-activation is at least [`KINK_MARGIN`] from zero.
pub fn random_network_check(kind: NetKind, seed: u64) -> Result<f64, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_features = rng.random_range(1..=5);
    let mut widths = |lo: usize, hi: usize| -> Vec<usize> {
        let depth = rng.random_range(lo..=hi);
        (0..depth).map(|_| rng.random_range(1..=6)).collect()
    };
    let (gcn_widths, head_widths) = match kind {
        NetKind::Dense => (vec![], widths(1, 3)),
        NetKind::Gcn => (widths(1, 2), widths(0, 2)),
        NetKind::Linear => (widths(0, 2), widths(0, 2)),
    };
    let shape = NetworkShape {
        in_features,
        gcn_widths,
        head_widths,
        outputs: rng.random_range(1..=3),
    };
    // Linear nets use positive weights, inputs and loss coefficients so that no
    // gradient entry cancels down to the rounding floor of the difference quotient.
    let linear = kind == NetKind::Linear;
    let scheme = if !linear && rng.random_bool(0.2) {
        InitScheme::UnitRange
    } else {
        InitScheme::FanIn
    };
    let mut net = Network::init(&shape, scheme, &mut rng);
    if scheme == InitScheme::FanIn {
        for l in &mut net.head_layers {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    if linear {
        // Positive weights around 1/fan_in keep every layer's output near unit scale.
        let mut positive = |w: &mut Tensor2| {
            let fan_in = w.rows() as f64;
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5) / fan_in);
        };
        for l in &mut net.gcn_layers {
            l.activation = Activation::Identity;
            positive(&mut l.weights);
        }
        for l in &mut net.head_layers {
            l.activation = Activation::Identity;
            positive(&mut l.weights);
        }
    }
    let adj = match kind {
        NetKind::Dense => NormalizedAdjacency::identity(1),
        _ => {
            let n = rng.random_range(1..=8);
            random_graph(n, 0.4, &mut rng)
        }
    };
    let lo = if linear { 0.5 } else { -1.0 };
    let coeffs: Vec<f64> = (0..shape.outputs)
        .map(|_| rng.random_range(lo..1.0))
        .collect();
    let draw = |rng: &mut ChaCha8Rng| {
        let mut x = random_tensor(adj.n(), in_features, rng);
        if linear {
            x.data_mut().iter_mut().for_each(|v| *v = 1.0 + 0.5 * *v);
        }
        x
    };
    let mut features = draw(&mut rng);
    for _ in 0..MAX_REDRAWS {
        let (_, cache) = net.forward_cached(&features, &adj)?;
        if cache.relu_margin(&net) >= KINK_MARGIN {
            break;
        }
        features = draw(&mut rng);
    }
    grad_check(&net, &features, &adj, |out| {
        let dot: f64 = out.iter().zip(&coeffs).map(|(o, c)| o * c).sum();
        if !linear {
            let sq: f64 = out.iter().map(|o| 0.5 * o * o).sum();
            let grad = out.iter().zip(&coeffs).map(|(o, c)| o + c).collect();
            (dot + sq, grad)
        } else {
            (dot, coeffs.clone())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridTopology, Line};
    use crate::nn::{Activation, InitScheme, NetworkShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path4() -> NormalizedAdjacency {
        GridTopology::new(4, (0..3).map(|i| Line::new(i, i + 1).unwrap()), [])
            .unwrap()
            .normalized_adjacency()
    }

    fn sum_squares(out: &[f64]) -> (f64, Vec<f64>) {
        (
            out.iter().map(|v| v * v).sum(),
            out.iter().map(|v| 2.0 * v).collect(),
        )
    }

    fn random_features(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor2 {
        Tensor2::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_net_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = NetworkShape {
            in_features: 3,
            gcn_widths: vec![4],
            head_widths: vec![],
            outputs: 2,
        };
        let mut net = Network::init(&shape, InitScheme::FanIn, &mut rng);
        net.gcn_layers[0].activation = Activation::Identity;
        let x = random_features(&mut rng, 4, 3);
        let sum = |o: &[f64]| (o.iter().sum(), vec![1.0; o.len()]);
        let err = grad_check(&net, &x, &path4(), sum).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn relu_net_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let shape = NetworkShape {
            in_features: 3,
            gcn_widths: vec![5, 5],
            head_widths: vec![4],
            outputs: 1,
        };
        let net = Network::init(&shape, InitScheme::FanIn, &mut rng);
        let x = random_features(&mut rng, 4, 3);
        let err = grad_check(&net, &x, &path4(), sum_squares).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_loss_gives_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let shape = NetworkShape {
            in_features: 2,
            gcn_widths: vec![3],
            head_widths: vec![3],
            outputs: 1,
        };
        let net = Network::init(&shape, InitScheme::FanIn, &mut rng);
        let x = random_features(&mut rng, 4, 2);
        let err = grad_check(&net, &x, &path4(), |o| (7.0, vec![0.0; o.len()])).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn random_families_pass() {
        for seed in 0..10 {
            assert!(random_network_check(NetKind::Dense, seed).unwrap() < 1e-4);
            assert!(random_network_check(NetKind::Gcn, seed).unwrap() < 1e-4);
            assert!(random_network_check(NetKind::Linear, seed).unwrap() < 1e-8);
        }
    }
}
