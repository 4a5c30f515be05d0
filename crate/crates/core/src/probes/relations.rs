//! Cross-relation similarity of retrieved knowledge.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ffn::{cosine_with, norms};
use super::ProbeError;
use crate::stats::{welch_one_sided, Direction, WelchResult};
use crate::trace::ActivationTrace;

/// Normalization of the `m x m` cross-pair sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationDivisor {
    /// Divide by `m^2`, giving a mean in [-1, 1].
    #[default]
    Mean,
    /// Divide by the number of question pairs, `m(m-1)/2`.
    Pairs,
}

impl FromStr for RelationDivisor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(RelationDivisor::Mean),
            "pairs" => Ok(RelationDivisor::Pairs),
            _ => Err(format!(
                "unknown relation divisor {s:?} (expected mean or pairs)"
            )),
        }
    }
}

impl fmt::Display for RelationDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationDivisor::Mean => "mean",
            RelationDivisor::Pairs => "pairs",
        })
    }
}

/// Symmetric relation-by-relation similarity per layer for one popularity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationHeatmap {
    pub relations: Vec<String>,
    /// Layers 1..=L.
    pub layers: Vec<usize>,
    /// `values[k][x][y]` is the entry for `layers[k]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub divisor: RelationDivisor,
}

impl RelationHeatmap {
    fn layer_slot(&self, layer: usize) -> Result<usize, ProbeError> {
        self.layers
            .iter()
            .position(|&l| l == layer)
            .ok_or(ProbeError::BadLayer {
                layer,
                max: self.layers.len(),
            })
    }
}

/// `groups` holds, per relation, the traces of its `m` questions at one
/// popularity level. Every relation must contribute the same `m`.
pub fn relation_similarity(
    groups: &[(String, Vec<&ActivationTrace>)],
    divisor: RelationDivisor,
) -> Result<RelationHeatmap, ProbeError> {
    let (_, first) = groups.first().ok_or(ProbeError::Empty("relation groups"))?;
    let m = first.len();
    let config = first
        .first()
        .ok_or(ProbeError::Empty("relation questions"))?
        .config;
    for (rel, traces) in groups {
        if traces.len() != m {
            return Err(ProbeError::UnequalRelationSizes {
                relation: rel.clone(),
                expected: m,
                actual: traces.len(),
            });
        }
        if let Some(t) = traces.iter().find(|t| t.config != config) {
            return Err(ProbeError::ConfigMismatch {
                prompt_id: t.prompt_id.clone(),
            });
        }
    }
    let denom = match divisor {
        RelationDivisor::Mean => (m * m) as f64,
        RelationDivisor::Pairs => {
            if m < 2 {
                return Err(ProbeError::Empty("question pairs for the pairs divisor"));
            }
            (m * (m - 1) / 2) as f64
        }
    };
    let r = groups.len();
    let values = (0..config.num_layers)
        .into_par_iter()
        .map(|l| {
            let vecs: Vec<Vec<&[f32]>> = groups
                .iter()
                .map(|(_, ts)| {
                    ts.iter()
                        .map(|t| t.layers[l].up_projection.as_slice())
                        .collect()
                })
                .collect();
            let ns: Vec<Vec<f64>> = vecs.iter().map(|v| norms(v)).collect();
            let mut grid = vec![vec![0.0; r]; r];
            for x in 0..r {
                for y in x..r {
                    let mut total = 0.0;
                    for (u, nu) in vecs[x].iter().zip(&ns[x]) {
                        for (v, nv) in vecs[y].iter().zip(&ns[y]) {
                            total += cosine_with(u, v, *nu, *nv);
                        }
                    }
                    grid[x][y] = total / denom;
                    grid[y][x] = grid[x][y];
                }
            }
            grid
        })
        .collect();
    Ok(RelationHeatmap {
        relations: groups.iter().map(|(r, _)| r.clone()).collect(),
        layers: (1..=config.num_layers).collect(),
        values,
        divisor,
    })
}

/// Strict upper-triangle entries at `layer`, row by row.
pub fn off_diagonal(heatmap: &RelationHeatmap, layer: usize) -> Result<Vec<f64>, ProbeError> {
    let grid = &heatmap.values[heatmap.layer_slot(layer)?];
    Ok((0..grid.len())
        .flat_map(|x| (x + 1..grid.len()).map(move |y| grid[x][y]))
        .collect())
}

/// Welch's test of the off-diagonal entries of `a` against those of `b`.
pub fn heatmap_welch(
    a: &RelationHeatmap,
    b: &RelationHeatmap,
    layer: usize,
    direction: Direction,
) -> Result<WelchResult, ProbeError> {
    Ok(welch_one_sided(
        &off_diagonal(a, layer)?,
        &off_diagonal(b, layer)?,
        direction,
    )?)
}
