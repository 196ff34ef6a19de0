//! Triangular leader-follower formation geometry.

use std::collections::BTreeMap;

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("formation distances must be positive and finite (leader-follower {leader_follower}, follower-follower {follower_follower})")]
    NonPositiveDistance {
        leader_follower: f64,
        follower_follower: f64,
    },
    #[error("triangle inequality violated: 2 * d_leader_follower = {twice_lf} < d_follower_follower = {ff}")]
    TriangleInequality { twice_lf: f64, ff: f64 },
    #[error("leader index {leader} out of range for {agents} agents")]
    LeaderOutOfRange { leader: usize, agents: usize },
    #[error("expected {expected} positions, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("offsets disagree with desired distance for pair ({i}, {j}): {actual} vs {desired}")]
    InconsistentOffsets {
        i: usize,
        j: usize,
        actual: f64,
        desired: f64,
    },
}

/// Desired distance graph plus leader-relative slot offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct FormationSpec {
    agent_count: usize,
    leader_index: usize,
    /// Keyed by `(i, j)` with `i < j`.
    desired_distance: BTreeMap<(usize, usize), f64>,
    /// Leader-relative `(y, z)` slot of every agent; the leader's entry is zero.
    offsets: Vec<Point>,
}

impl FormationSpec {
    /// Builds a spec whose distance graph is complete and derived from `offsets`.
    pub fn from_offsets(leader_index: usize, offsets: Vec<Point>) -> Result<Self, FormationError> {
        let agent_count = offsets.len();
        if leader_index >= agent_count {
            return Err(FormationError::LeaderOutOfRange {
                leader: leader_index,
                agents: agent_count,
            });
        }
        let mut desired_distance = BTreeMap::new();
        for i in 0..agent_count {
            for j in i + 1..agent_count {
                let d = (offsets[i] - offsets[j]).norm();
                if !(d.is_finite() && d > 0.0) {
                    return Err(FormationError::NonPositiveDistance {
                        leader_follower: d,
                        follower_follower: d,
                    });
                }
                desired_distance.insert((i, j), d);
            }
        }
        Ok(Self {
            agent_count,
            leader_index,
            desired_distance,
            offsets,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    pub fn leader_index(&self) -> usize {
        self.leader_index
    }

    pub fn is_leader(&self, agent: usize) -> bool {
        agent == self.leader_index
    }

    pub fn followers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.agent_count).filter(move |i| *i != self.leader_index)
    }

    /// Desired distance for an unordered pair, if constrained.
    pub fn desired_distance(&self, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.desired_distance.get(&key).copied()
    }

    /// All constrained pairs in ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.desired_distance.iter().map(|(k, v)| (*k, *v))
    }

    /// Partners of `agent` and the desired distance to each.
    pub fn partners(&self, agent: usize) -> Vec<(usize, f64)> {
        (0..self.agent_count)
            .filter(|j| *j != agent)
            .filter_map(|j| self.desired_distance(agent, j).map(|d| (j, d)))
            .collect()
    }

    pub fn offset(&self, agent: usize) -> Point {
        self.offsets[agent]
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    pub fn follower_offsets(&self) -> Vec<Point> {
        self.followers().map(|i| self.offsets[i]).collect()
    }

    /// Slot positions for a leader at `leader_position`.
    pub fn nominal_positions(&self, leader_position: Point) -> Vec<Point> {
        self.offsets.iter().map(|o| leader_position + o).collect()
    }

    /// Checks that the offsets realize every desired distance (to 1e-12 relative).
    pub fn check_consistency(&self) -> Result<(), FormationError> {
        for ((i, j), desired) in self.pairs() {
            let actual = (self.offsets[i] - self.offsets[j]).norm();
            if (actual - desired).abs() > 1e-12 * desired.max(1.0) {
                return Err(FormationError::InconsistentOffsets { i, j, actual, desired });
            }
        }
        Ok(())
    }
}

/// Three agents: leader at the apex, followers mirrored about the leader's
/// `y` and trailing below it in `z`.
pub fn triangular_spec(leader_follower: f64, follower_follower: f64) -> Result<FormationSpec, FormationError> {
    triangular_spec_with_leader(leader_follower, follower_follower, 0)
}

pub fn triangular_spec_with_leader(
    leader_follower: f64,
    follower_follower: f64,
    leader_index: usize,
) -> Result<FormationSpec, FormationError> {
    let valid = |d: f64| d.is_finite() && d > 0.0;
    if !valid(leader_follower) || !valid(follower_follower) {
        return Err(FormationError::NonPositiveDistance {
            leader_follower,
            follower_follower,
        });
    }
    if 2.0 * leader_follower < follower_follower {
        return Err(FormationError::TriangleInequality {
            twice_lf: 2.0 * leader_follower,
            ff: follower_follower,
        });
    }
    if leader_index >= 3 {
        return Err(FormationError::LeaderOutOfRange {
            leader: leader_index,
            agents: 3,
        });
    }
    let half = 0.5 * follower_follower;
    let height = (leader_follower * leader_follower - half * half).max(0.0).sqrt();
    let slots = [Point::new(-half, -height), Point::new(half, -height)];

    let mut offsets = vec![Point::zeros(); 3];
    let mut next = slots.iter();
    for (agent, offset) in offsets.iter_mut().enumerate() {
        if agent != leader_index {
            *offset = *next.next().unwrap();
        }
    }
    // Store the requested distances rather than recomputed norms: the
    // recomputed value can differ from the input in the last bit.
    let mut desired_distance = BTreeMap::new();
    let followers: Vec<usize> = (0..3).filter(|i| *i != leader_index).collect();
    for &f in &followers {
        let key = (leader_index.min(f), leader_index.max(f));
        desired_distance.insert(key, leader_follower);
    }
    desired_distance.insert((followers[0], followers[1]), follower_follower);

    let spec = FormationSpec {
        agent_count: 3,
        leader_index,
        desired_distance,
        offsets,
    };
    spec.check_consistency()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidityReport {
    /// `|‖p_i − p_j‖ − d_ij|` per constrained pair.
    pub pair_errors: Vec<((usize, usize), f64)>,
    pub passed: bool,
}

impl RigidityReport {
    pub fn max_error(&self) -> f64 {
        self.pair_errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

pub fn check_rigidity(positions: &[Point], spec: &FormationSpec, tol: f64) -> Result<RigidityReport, FormationError> {
    if positions.len() != spec.agent_count() {
        return Err(FormationError::LengthMismatch {
            expected: spec.agent_count(),
            got: positions.len(),
        });
    }
    let pair_errors: Vec<_> = spec
        .pairs()
        .map(|((i, j), d)| ((i, j), ((positions[i] - positions[j]).norm() - d).abs()))
        .collect();
    let passed = pair_errors.iter().all(|(_, e)| *e <= tol);
    Ok(RigidityReport { pair_errors, passed })
}

/// Rigid motion of the YZ plane: rotation by `rotation_angle` then translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub rotation_angle: f64,
    pub translation: [f64; 2],
}

impl PlanarTransform {
    pub fn identity() -> Self {
        Self {
            rotation_angle: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn new(rotation_angle: f64, translation: Point) -> Self {
        Self {
            rotation_angle,
            translation: [translation.x, translation.y],
        }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        Rotation2::new(self.rotation_angle) * p + Point::new(self.translation[0], self.translation[1])
    }
}

pub fn apply_transform(t: &PlanarTransform, points: &[Point]) -> Vec<Point> {
    points.iter().map(|p| t.apply_point(p)).collect()
}
