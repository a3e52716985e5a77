//! Helpers shared by the integration tests: an independent LP oracle for the
//! clearing problem and random instance generators.

#![allow(dead_code)]

use gridbid::market::GenerationUnit;
use rand::Rng;

/// Optimum of `min Σ p_i g_i  s.t.  Σ g_i = d,  lo_i ≤ g_i ≤ hi_i` by enumerating
/// basic solutions: every unit at a bound except at most one.
pub fn brute_force_cost(offers: &[f64], lo: &[f64], hi: &[f64], demand: f64) -> Option<f64> {
    let n = offers.len();
    let mut best: Option<f64> = None;
    let mut consider = |g: &[f64]| {
        let cost: f64 = offers.iter().zip(g).map(|(p, g)| p * g).sum();
        best = Some(best.map_or(cost, |b: f64| b.min(cost)));
    };
    let tol = 1e-9 * (1.0 + demand.abs());
    let mut g = vec![0.0; n];
    for mask in 0u32..(1 << n) {
        for i in 0..n {
            g[i] = if mask & (1 << i) != 0 { hi[i] } else { lo[i] };
        }
        let total: f64 = g.iter().sum();
        if (total - demand).abs() <= tol {
            consider(&g);
        }
        // Release unit j from its bound to absorb the imbalance.
        for j in 0..n {
            let others = total - g[j];
            let gj = demand - others;
            if gj >= lo[j] - tol && gj <= hi[j] + tol {
                let saved = g[j];
                g[j] = gj.clamp(lo[j], hi[j]);
                consider(&g);
                g[j] = saved;
            }
        }
    }
    best
}

/// Lagrangian dual `q(λ) = λ·d + Σ_i min_{g∈[lo,hi]} (p_i − λ)·g`.
pub fn dual_value(offers: &[f64], lo: &[f64], hi: &[f64], demand: f64, lambda: f64) -> f64 {
    lambda * demand
        + offers
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&p, (&l, &h))| {
                let slope = p - lambda;
                (slope * l).min(slope * h)
            })
            .sum::<f64>()
}

/// Maximizers of the concave, piecewise-linear dual among its breakpoints
/// (the offers), with the optimal dual value. Several maximizers signal a
/// degenerate instance whose price is not unique.
pub fn dual_prices(offers: &[f64], lo: &[f64], hi: &[f64], demand: f64) -> (Vec<f64>, f64) {
    let values: Vec<f64> = offers
        .iter()
        .map(|&l| dual_value(offers, lo, hi, demand, l))
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + best.abs());
    let mut argmax: Vec<f64> = offers
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= best - tol)
        .map(|(&p, _)| p)
        .collect();
    argmax.sort_by(f64::total_cmp);
    argmax.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    (argmax, best)
}

pub struct Instance {
    pub units: Vec<GenerationUnit>,
    pub bids: Vec<f64>,
    pub demand: f64,
}

impl Instance {
    pub fn offers(&self) -> Vec<f64> {
        self.units
            .iter()
            .zip(&self.bids)
            .map(|(u, k)| u.marginal_cost * k)
            .collect()
    }
    pub fn lo(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.g_min).collect()
    }
    pub fn hi(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.g_max).collect()
    }
}

pub fn random_unit(rng: &mut impl Rng, id: usize) -> GenerationUnit {
    let g_min = rng.random_range(0.0..20.0);
    GenerationUnit {
        id,
        marginal_cost: rng.random_range(0.5..5.0),
        g_min,
        g_max: g_min + rng.random_range(5.0..100.0),
        k_max: rng.random_range(1.0..3.0),
        fixed_cost: rng.random_range(0.0..200.0),
        bus: id,
    }
}

/// Random feasible instance with demand strictly between the total bounds.
pub fn random_instance(rng: &mut impl Rng, n_units: usize) -> Instance {
    let units: Vec<GenerationUnit> = (0..n_units).map(|i| random_unit(rng, i)).collect();
    let bids = units
        .iter()
        .map(|u| rng.random_range(1.0..=u.k_max))
        .collect();
    let lo: f64 = units.iter().map(|u| u.g_min).sum();
    let hi: f64 = units.iter().map(|u| u.g_max).sum();
    let demand = lo + (hi - lo) * rng.random_range(0.001..0.999);
    Instance {
        units,
        bids,
        demand,
    }
}

pub fn ieee30_units() -> Vec<GenerationUnit> {
    gridbid::market::load_units(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/ieee30_units.csv"
    ))
    .expect("30-bus unit file")
}

pub fn data_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}
