//! ISO market clearing: bid-weighted cost minimization under one balance
//! constraint and per-unit box constraints, solved in closed form by merit order.
//!
//! With a single equality constraint the dual multiplier of the balance row is
//! the effective bid price `k_i · λ_{i,m}` of the marginal unit, so no LP solver
//! is needed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("demand {demand} MW is below the total minimum output {min_total} MW")]
    InfeasibleLow { demand: f64, min_total: f64 },
    #[error("demand {demand} MW exceeds the total capacity {max_total} MW")]
    InfeasibleHigh { demand: f64, max_total: f64 },
    #[error("invalid bids: {}", describe(.0))]
    InvalidBids(Vec<BidViolation>),
    #[error("{units} units but {bids} bids")]
    BidCount { units: usize, bids: usize },
    #[error("unit {id}: {message}")]
    InvalidUnit { id: usize, message: String },
    #[error("unit file {path}: {message}")]
    UnitFile { path: String, message: String },
}

fn describe(v: &[BidViolation]) -> String {
    v.iter()
        .map(|b| format!("unit {} bid {} outside [1, {}]", b.unit + 1, b.bid, b.k_max))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One generation unit. `id` and `bus` are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationUnit {
    pub id: usize,
    pub marginal_cost: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub k_max: f64,
    /// Carried through from the unit tables; enters no clearing or reward equation.
    pub fixed_cost: f64,
    pub bus: usize,
}

impl GenerationUnit {
    // Negated comparisons so that NaN fields are rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), MarketError> {
        let err = |message: &str| MarketError::InvalidUnit {
            id: self.id + 1,
            message: message.to_string(),
        };
        if !(self.g_min >= 0.0 && self.g_min <= self.g_max) {
            return Err(err("requires 0 <= g_min <= g_max"));
        }
        if !(self.marginal_cost > 0.0) {
            return Err(err("marginal cost must be positive"));
        }
        if !(self.k_max >= 1.0) {
            return Err(err("k_max must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct UnitRow {
    id: usize,
    marginal_cost: f64,
    g_min: f64,
    g_max: f64,
    k_max: f64,
    fixed_cost: f64,
    bus: usize,
}

/// Reads a unit CSV (`id,marginal_cost,g_min,g_max,k_max,fixed_cost,bus`, 1-based ids and buses).
/// Rows must list ids 1..=n in order.
pub fn load_units(path: impl AsRef<Path>) -> Result<Vec<GenerationUnit>, MarketError> {
    let path = path.as_ref();
    let file_err = |message: String| MarketError::UnitFile {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| file_err(e.to_string()))?;
    let mut units = Vec::new();
    for (i, row) in reader.deserialize::<UnitRow>().enumerate() {
        let row = row.map_err(|e| file_err(e.to_string()))?;
        if row.id != i + 1 {
            return Err(file_err(format!(
                "expected unit id {}, found {}",
                i + 1,
                row.id
            )));
        }
        if row.bus == 0 {
            return Err(file_err(format!("unit {}: bus labels are 1-based", row.id)));
        }
        let unit = GenerationUnit {
            id: i,
            marginal_cost: row.marginal_cost,
            g_min: row.g_min,
            g_max: row.g_max,
            k_max: row.k_max,
            fixed_cost: row.fixed_cost,
            bus: row.bus - 1,
        };
        unit.validate()?;
        units.push(unit);
    }
    if units.is_empty() {
        return Err(file_err("no units".into()));
    }
    Ok(units)
}

pub fn write_units(units: &[GenerationUnit], path: impl AsRef<Path>) -> Result<(), MarketError> {
    let path = path.as_ref();
    let file_err = |message: String| MarketError::UnitFile {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(e.to_string()))?;
    for u in units {
        w.serialize(UnitRow {
            id: u.id + 1,
            marginal_cost: u.marginal_cost,
            g_min: u.g_min,
            g_max: u.g_max,
            k_max: u.k_max,
            fixed_cost: u.fixed_cost,
            bus: u.bus + 1,
        })
        .map_err(|e| file_err(e.to_string()))?;
    }
    w.flush().map_err(|e| file_err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidViolation {
    pub unit: usize,
    pub bid: f64,
    pub k_max: f64,
}

/// Lists every unit whose bid lies outside `[1, k_max]` (both ends inclusive).
pub fn validate_bids(units: &[GenerationUnit], bids: &[f64]) -> Result<(), MarketError> {
    if units.len() != bids.len() {
        return Err(MarketError::BidCount {
            units: units.len(),
            bids: bids.len(),
        });
    }
    let violations: Vec<BidViolation> = units
        .iter()
        .zip(bids)
        .filter(|(u, &k)| !(1.0..=u.k_max).contains(&k))
        .map(|(u, &k)| BidViolation {
            unit: u.id,
            bid: k,
            k_max: u.k_max,
        })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(MarketError::InvalidBids(violations))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingResult {
    pub dispatch: Vec<f64>,
    pub price: f64,
    pub total_cost: f64,
    pub marginal_unit: Option<usize>,
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn clear_market(
    units: &[GenerationUnit],
    bids: &[f64],
    demand: f64,
) -> Result<ClearingResult, MarketError> {
    validate_bids(units, bids)?;
    let min_total: f64 = units.iter().map(|u| u.g_min).sum();
    let max_total: f64 = units.iter().map(|u| u.g_max).sum();
    if !(demand >= min_total) {
        return Err(MarketError::InfeasibleLow { demand, min_total });
    }
    if demand > max_total {
        return Err(MarketError::InfeasibleHigh { demand, max_total });
    }

    let offer: Vec<f64> = units
        .iter()
        .zip(bids)
        .map(|(u, k)| k * u.marginal_cost)
        .collect();
    let mut order: Vec<usize> = (0..units.len()).collect();
    // Stable sort keeps ascending id among equal offers.
    order.sort_by(|&a, &b| offer[a].total_cmp(&offer[b]));

    let mut dispatch: Vec<f64> = units.iter().map(|u| u.g_min).collect();
    let mut residual = demand - min_total;
    let mut marginal_unit = None;
    for &i in &order {
        if residual <= 0.0 {
            break;
        }
        let headroom = units[i].g_max - units[i].g_min;
        let take = residual.min(headroom);
        if take > 0.0 {
            dispatch[i] += take;
            residual -= take;
            marginal_unit = Some(i);
        }
    }

    let price = match marginal_unit {
        Some(i) => offer[i],
        None => offer.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let total_cost = offer.iter().zip(&dispatch).map(|(p, g)| p * g).sum();
    Ok(ClearingResult {
        dispatch,
        price,
        total_cost,
        marginal_unit,
    })
}

/// Single-step profit `λ·g − λ_m·g`.
pub fn compute_reward(unit: &GenerationUnit, price: f64, dispatch: f64) -> f64 {
    price * dispatch - unit.marginal_cost * dispatch
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ieee30() -> Vec<GenerationUnit> {
        let rows = [
            (2.0, 80.0, 120.0),
            (1.75, 80.0, 135.0),
            (1.0, 50.0, 142.0),
            (3.25, 50.0, 125.0),
            (3.0, 35.0, 175.0),
            (3.0, 40.0, 165.0),
        ];
        rows.iter()
            .enumerate()
            .map(|(id, &(mc, gmax, c))| GenerationUnit {
                id,
                marginal_cost: mc,
                g_min: 5.0,
                g_max: gmax,
                k_max: 2.0,
                fixed_cost: c,
                bus: id,
            })
            .collect()
    }

    fn single() -> Vec<GenerationUnit> {
        vec![GenerationUnit {
            id: 0,
            marginal_cost: 2.0,
            g_min: 5.0,
            g_max: 80.0,
            k_max: 2.0,
            fixed_cost: 0.0,
            bus: 0,
        }]
    }

    #[test]
    fn single_unit_passthrough() {
        let r = clear_market(&single(), &[1.0], 50.0).unwrap();
        assert_eq!(r.dispatch, vec![50.0]);
        assert_eq!(r.price, 2.0);
        assert_eq!(r.marginal_unit, Some(0));
    }

    #[test]
    fn ieee30_competitive_dispatch() {
        let r = clear_market(&ieee30(), &[1.0; 6], 150.0).unwrap();
        assert_eq!(r.dispatch, vec![5.0, 80.0, 50.0, 5.0, 5.0, 5.0]);
        assert_eq!(r.price, 1.75);
        assert_eq!(r.marginal_unit, Some(1));
    }

    #[test]
    fn infeasible_demand() {
        let units = ieee30();
        assert!(matches!(
            clear_market(&units, &[1.5; 6], 1000.0),
            Err(MarketError::InfeasibleHigh { max_total, .. }) if max_total == 335.0
        ));
        assert!(matches!(
            clear_market(&units, &[1.0; 6], 10.0),
            Err(MarketError::InfeasibleLow { min_total, .. }) if min_total == 30.0
        ));
    }

    #[test]
    fn zero_residual_uses_cheapest_offer() {
        let units = ieee30();
        let r = clear_market(&units, &[1.0; 6], 30.0).unwrap();
        assert_eq!(r.marginal_unit, None);
        assert_eq!(r.price, 1.0);
        assert_eq!(r.dispatch, vec![5.0; 6]);
    }

    #[test]
    fn ties_go_to_lower_id() {
        let mut units = ieee30();
        units[4].g_min = 0.0;
        units[5].g_min = 0.0;
        // Units 5 and 6 both offer 3.0; demand reaches into that tier.
        let bids = [1.0; 6];
        let below: f64 = 80.0 + 80.0 + 50.0 + 5.0;
        let r = clear_market(&units, &bids, below + 10.0).unwrap();
        assert_eq!(r.dispatch[4], 10.0);
        assert_eq!(r.dispatch[5], 0.0);
        assert_eq!(r.marginal_unit, Some(4));
    }

    #[test]
    fn bid_validation() {
        let units = ieee30();
        assert!(validate_bids(&units, &[1.0; 6]).is_ok());
        assert!(validate_bids(&units, &[2.0; 6]).is_ok());
        let mut bids = [1.0; 6];
        bids[2] = 0.5;
        bids[4] = 2.01;
        match validate_bids(&units, &bids) {
            Err(MarketError::InvalidBids(v)) => {
                assert_eq!(v.iter().map(|b| b.unit).collect::<Vec<_>>(), vec![2, 4])
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            validate_bids(&units, &[1.0; 5]),
            Err(MarketError::BidCount { .. })
        ));
        assert!(clear_market(&units, &bids, 150.0).is_err());
    }

    #[test]
    fn reward_examples() {
        let mut u = single().remove(0);
        u.marginal_cost = 1.0;
        assert_eq!(compute_reward(&u, 2.0, 50.0), 50.0);
        for g in [0.0, 7.5, 80.0] {
            assert_eq!(compute_reward(&u, 1.0, g), 0.0);
        }
        let unit2 = &ieee30()[1];
        assert_eq!(compute_reward(unit2, 1.75, 80.0), 0.0);
    }

    #[test]
    fn unit_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("units.csv");
        write_units(&ieee30(), &path).unwrap();
        assert_eq!(load_units(&path).unwrap(), ieee30());
    }

    #[test]
    fn shipped_ieee30_units_match() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/ieee30_units.csv");
        let loaded = load_units(path).unwrap();
        let expected: Vec<_> = ieee30()
            .into_iter()
            .zip([0, 1, 4, 7, 10, 12])
            .map(|(mut u, bus)| {
                u.bus = bus;
                u
            })
            .collect();
        assert_eq!(loaded, expected);
    }
}
